# Answer scoring: Levenshtein-based ANLS and the soft VQA accuracy.

from boxattn import EvalRecord, anls, edit_distance, vqa_accuracy
from boxattn.metrics import score_records

print(edit_distance("kitten", "sitting"))       # 3
print(edit_distance("twelve", "twelve"))        # 0

# anls = 1 - dist/maxlen, truncated to zero below 0.5 so near-misses count
# but garbage does not; comparison is case- and whitespace-insensitive
print(anls("word", "ward"))                     # 0.75
print(anls(" Word ", "word"))                   # 1.0
print(anls("zebra", "quartz"))                  # 0.0, raw score under 0.5

# multiple references: best one wins
print(anls("12 pm", ["noon", "12 pm", "midday"]))

# vqa credit is matches/3 capped at one, so three annotators agreeing
# is as good as ten
print(vqa_accuracy("yes", ["yes", "yes", "yes", "no"]))   # 1.0
print(vqa_accuracy("yes", ["yes", "no", "no", "no"]))     # 1/3

records = [
    EvalRecord(1, "stop", ["stop"]),
    EvalRecord(2, "stob", ["stop"]),
    EvalRecord(3, "go", ["stop"]),
]
print(score_records(records))
for r in records:
    print(f"  q{r.question_id}: anls={r.score_anls:.2f} vqa={r.score_vqa:.2f}")
