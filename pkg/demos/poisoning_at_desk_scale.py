"""
Label flipping against the protocol and against plain FedAvg
============================================================

Thirty participants, twelve of them malicious: they flip label 1 to 7,
aggregate the worst updates they see and vote against everything.
Takes about half a minute.
"""

from blockdfl.adversary import AdversaryConfig
from blockdfl.sim import desk_config, run_fedavg_baseline, run_simulation, summarize

for f in (0.0, 0.4):
    cfg = desk_config(seed=0, adversary=AdversaryConfig(malicious_fraction=f))
    ours = summarize(run_simulation(cfg))
    base = summarize(run_fedavg_baseline(cfg))
    print(f"malicious fraction {f}")
    print(f"  protocol  accuracy {ours['mean_accuracy']:.4f}  "
          f"attack ratio {ours['attack_ratio']:.2f}  empty blocks {ours['empty_block_pct']:.1f}%  "
          f"final malicious stake {ours['final_malicious_stake_share']:.3f}")
    print(f"  fedavg    accuracy {base['mean_accuracy']:.4f}")

# %%
# The stake held by malicious participants shrinks because only the
# providers, aggregator and supporting verifiers of approved blocks are paid.
log = run_simulation(desk_config(seed=0, adversary=AdversaryConfig(0.2)))
print("malicious stake every 10 rounds:",
      [round(r.malicious_stake_share, 3) for r in log.rounds[9::10]])
