"""Segmentation metrics on a handful of small hand-made labelings."""
from fifaseg.metrics import edit_score, evaluate, f1_at, iou_iod

A, B, BG = 0, 1, 2
gt = [BG, A, A, A, A, B, B, B, BG, BG]
pred = [BG, BG, A, A, A, A, B, B, B, BG]

report = evaluate(pred, gt, background=[BG])
for key, value in report.to_dict().items():
    print("%-7s %.3f" % (key, value))

# IoU/IoD match each ground-truth segment to its best overlapping prediction
print("iou/iod of a half-covered segment:", iou_iod([A] * 5 + [B] * 5, [A] * 10))

# edit score only looks at the order of segments, not at their lengths
print("edit [A,B,A] vs [A,B]: %.3f" % edit_score([A, B, A], [A, B]))

for tau in (0.25, 0.5, 0.75):
    half = [BG] * 4 + [A] * 2 + [BG] * 6
    full = [BG] * 4 + [A] * 4 + [BG] * 4
    print("F1@%.2f for a prediction covering half the segment: %.1f" % (tau, f1_at(half, full, tau, [BG])))
