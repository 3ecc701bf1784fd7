"""Scoring generated headlines: ROUGE, success rate, length difference and phrase positions."""

from seq2bf.evaluation import EvalPair, evaluate, rouge_l, rouge_n

ref = "acme launches new robot in kyoto".split()
hyp = "new robot from acme in kyoto".split()
print("ROUGE-1", rouge_n(ref, hyp, 1))
print("ROUGE-2", rouge_n(ref, hyp, 2))
print("ROUGE-L", rouge_l(ref, hyp))

pairs = [
    EvalPair(ref, hyp, ["new", "robot"]),
    EvalPair("prices rise in osaka".split(), "osaka prices rise again this week".split(), ["osaka"]),
    EvalPair("kobe gets solar lamp".split(), "solar lamp sale".split(), ["kobe"]),
]
report = evaluate(pairs, n_bins=5)
print()
print(report.table("demo"))
print("\nphrase position bins (generated):", report.histogram.generated)
print("phrase position bins (reference):", report.histogram.reference)
print("ROUGE without the phrase:", {k: tuple(round(x, 3) for x in v) for k, v in report.rouge_without_phrase.items()})
