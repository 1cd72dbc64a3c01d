# Swap the inference graph out from under a trained model.
#
# The same checkpoint is scored three ways: with the true relation graph,
# with a random one, and with every edge replaced by its inverse. If the
# heads really read the graph, shuffling it should hurt and reversing it
# should hurt more. A vanilla stack of the same depth and width is the
# control. Small budgets here; the acceptance test runs the full grid.

from boxattn import ExperimentSpec, ablation_grid
from boxattn.harness import ablation_table

base = ExperimentSpec(n_train=1200, n_test=200)
report = ablation_grid(base,
                       structures=("6N", "2N->4S"),
                       contexts=(2,),
                       eval_graphs=("normal", "random", "reversed"))

print(ablation_table(report))

cells = {(c["structure"], c["eval_graph"]): c["accuracy"]
         for c in report["cells"]}
spatial = cells[("2N->4S", "normal")]
print(f"\nspatial normal {spatial:.3f} vs random "
      f"{cells[('2N->4S', 'random')]:.3f} vs reversed "
      f"{cells[('2N->4S', 'reversed')]:.3f}; vanilla "
      f"{cells[('6N', 'normal')]:.3f}")
