"""Command-line front end.

Subcommands: gen (synthetic dataset), graph (relation graph of a scene),
train, eval, ablate (structure/context/graph-mode grid), gradcheck
(finite-difference verification of the full model). Reports are JSON;
ablate also prints a plain-text table.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import autodiff
from .geometry import randomize_graph, reverse_graph
from .harness import (GRAPH_MODES, ExperimentSpec, ablation_grid, ablation_table,
                      build_batch, evaluate, load_or_generate, report_json,
                      sparsity_report, train_model)
from .model import DecodeState, Model
from .synth import (SceneParams, Vocabulary, generate_dataset, read_dataset,
                    write_dataset)


def _single_thread():
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(1)
    except ImportError:
        pass


def _add_scene_args(p):
    p.add_argument("--width", type=float, default=100.0)
    p.add_argument("--height", type=float, default=100.0)
    p.add_argument("--k-min", type=int, default=4)
    p.add_argument("--k-max", type=int, default=8)
    p.add_argument("--feature-dim", type=int, default=16)


def _scene_params(args) -> SceneParams:
    return SceneParams(image_width=args.width, image_height=args.height,
                       k_min=args.k_min, k_max=args.k_max,
                       feature_dim=args.feature_dim)


def _add_spec_args(p):
    _add_scene_args(p)
    p.add_argument("--structure", default="2N->4S")
    p.add_argument("--context-size", type=int, default=2)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--d-model", type=int, default=96)
    p.add_argument("--n-heads", type=int, default=12)
    p.add_argument("--intermediate-size", type=int, default=192)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--n-ans", type=int, default=4)
    p.add_argument("--train-graph", choices=GRAPH_MODES, default="normal")
    p.add_argument("--eval-graph", choices=GRAPH_MODES, default="normal")
    p.add_argument("--graph-seed", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-seed", type=int, default=7)
    p.add_argument("--n-train", type=int, default=5000)
    p.add_argument("--n-test", type=int, default=1000)
    p.add_argument("--epochs", type=int, default=4)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--base-lr", type=float, default=1e-3)
    p.add_argument("--warmup-iters", type=int, default=40)
    p.add_argument("--warmup-factor", type=float, default=0.2)
    p.add_argument("--decay-steps", type=int, nargs="*", default=[])
    p.add_argument("--decay-rate", type=float, default=0.1)
    p.add_argument("--clip-norm", type=float, default=0.25)
    p.add_argument("--train-data", default=None, help="JSONL from `gen`; generated if omitted")
    p.add_argument("--test-data", default=None)


def _spec(args) -> ExperimentSpec:
    return ExperimentSpec(
        structure=args.structure, context_size=args.context_size, top_k=args.top_k,
        d_model=args.d_model, n_heads=args.n_heads,
        intermediate_size=args.intermediate_size, dropout=args.dropout,
        n_ans=args.n_ans, train_graph=args.train_graph, eval_graph=args.eval_graph,
        graph_seed=args.graph_seed, seed=args.seed, data_seed=args.data_seed,
        n_train=args.n_train, n_test=args.n_test, epochs=args.epochs,
        batch_size=args.batch_size, base_lr=args.base_lr,
        warmup_factor=args.warmup_factor, warmup_iters=args.warmup_iters,
        decay_rate=args.decay_rate, decay_steps=tuple(args.decay_steps),
        clip_norm=args.clip_norm, scene=_scene_params(args),
        train_path=args.train_data, test_path=args.test_data)


def _emit(text: str, path: str | None):
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def cmd_gen(args) -> int:
    scenes = generate_dataset(args.n, _scene_params(args), args.seed)
    write_dataset(scenes, args.out)
    relations = {}
    for s in scenes:
        relations[s.relation] = relations.get(s.relation, 0) + 1
    print(json.dumps({"n": len(scenes), "out": args.out,
                      "relations": relations}, sort_keys=True))
    return 0


def cmd_graph(args) -> int:
    scenes = read_dataset(args.scene)
    scene = scenes[args.index]
    g = scene.graph()
    if args.mode == "reversed":
        g = reverse_graph(g)
    elif args.mode == "random":
        g = randomize_graph(scene.k, np.random.SeedSequence((args.graph_seed,
                                                             scene.question_id)))
    _emit(g.to_json(), args.out)
    return 0


def cmd_train(args) -> int:
    spec = _spec(args)
    vocab = Vocabulary()
    train_scenes, test_scenes = load_or_generate(spec)
    model, train_info = train_model(spec, train_scenes, vocab)
    eval_info = evaluate(model, test_scenes, vocab, spec.eval_graph,
                         spec.graph_seed, spec.batch_size)
    report = {
        "spec": spec.to_dict(),
        "n_parameters": model.n_parameters,
        "train": train_info,
        "eval": eval_info,
        "sparsity": sparsity_report(model, test_scenes),
    }
    if args.save:
        model.save(args.save)
        report["checkpoint"] = args.save
    _emit(report_json(report), args.report)
    return 0


def cmd_eval(args) -> int:
    model = Model.load(args.model)
    scenes = read_dataset(args.test_data)
    info = evaluate(model, scenes, Vocabulary(), args.eval_graph,
                    args.graph_seed, args.batch_size, beam=args.beam)
    report = {"eval": info, "eval_graph": args.eval_graph, "beam": args.beam,
              "sparsity": sparsity_report(model, scenes)}
    _emit(report_json(report), args.report)
    return 0


def cmd_ablate(args) -> int:
    report = ablation_grid(_spec(args), structures=tuple(args.structures),
                           contexts=tuple(args.contexts),
                           eval_graphs=tuple(args.eval_graphs))
    _emit(report_json(report), args.report)
    if args.report:
        print(ablation_table(report))
    return 0


def cmd_gradcheck(args) -> int:
    spec = _spec(args)
    vocab = Vocabulary()
    scenes = generate_dataset(args.n_scenes, spec.scene, args.data_seed)
    batch, rel, targets, teacher, _ = build_batch(scenes[:1], vocab, spec.n_ans)
    model = Model(spec.model_config(len(vocab)), seed=spec.seed)

    def loss_fn():
        scores = model.forward(batch, rel, DecodeState.teacher(teacher))
        return autodiff.bce_with_logits(scores, targets).mean()

    worst, report = autodiff.gradient_check(loss_fn, model.parameters, h=args.h)
    for name in sorted(report):
        print(f"{report[name]:.3e}  {name}")
    print(f"worst relative error: {worst:.3e} (tolerance {args.tolerance:g})")
    return 0 if worst < args.tolerance else 1


def main(argv=None) -> int:
    _single_thread()
    parser = argparse.ArgumentParser(
        prog="boxattn",
        description="spatially aware attention over box graphs: data, training, ablations")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic scene dataset")
    _add_scene_args(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("graph", help="emit the relation graph of a scene")
    p.add_argument("--scene", required=True, help="JSONL dataset file")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--mode", choices=GRAPH_MODES, default="normal")
    p.add_argument("--graph-seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_graph)

    p = sub.add_parser("train", help="train a model and report held-out metrics")
    _add_spec_args(p)
    p.add_argument("--save", default=None, help="checkpoint path (.npz)")
    p.add_argument("--report", default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--test-data", required=True)
    p.add_argument("--eval-graph", choices=GRAPH_MODES, default="normal")
    p.add_argument("--graph-seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--report", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="sweep structures, context sizes, graph modes")
    _add_spec_args(p)
    p.add_argument("--structures", nargs="+", default=["6N", "2N->4S"])
    p.add_argument("--contexts", type=int, nargs="+", default=[1, 2])
    p.add_argument("--eval-graphs", nargs="+", choices=GRAPH_MODES,
                   default=list(GRAPH_MODES))
    p.add_argument("--report", default=None)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    _add_spec_args(p)
    p.add_argument("--n-scenes", type=int, default=1)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.set_defaults(fn=cmd_gradcheck,
                   structure="1N->1S", d_model=16, n_heads=4,
                   intermediate_size=32, n_ans=3, k_min=3, k_max=3)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
