"""Where each token comes from: schedules, order stamps and decoder masks.

A five-token headline with a one-token phrase in the middle, generated under
each of the four outward strategies. Rows are the slot doing the attending,
columns the slot attended to; '#' marks a slot that is not yet known when the
row's token is used to predict something.
"""

from seq2bf.schedule import SEQ2BF_STRATEGIES, build_decoder_mask, build_schedule, render_mask, render_schedule

for strategy in SEQ2BF_STRATEGIES:
    schedule = build_schedule(strategy, M=2, N=2)
    print(f"== {strategy.value}")
    print("stamps:", dict(sorted(schedule.stamps.items())))
    print(render_mask(build_decoder_mask(schedule.stamps), sorted(schedule.stamps)))
    print(render_schedule(schedule))
    print()

# Tok-B with a longer backward side keeps alternating until the forward side
# runs out, then finishes backward on its own.
print("tok-b, M=4, N=1:", [e.label for e in build_schedule("tok-b", 4, 1).real_events])
