"""Most likely route through a small reconnaissance-to-exploit attack graph.

    python3 scripts/attack_path.py
"""

from flowsentry.scansim import AttackGraph, apply_transition, best_attack_path

# I: outside foothold, H: live hosts known, P: open ports known,
# V: service versions known, G: exploited
STATES = ["I", "H", "P", "V", "G"]
ACTIONS = [
    ("I", "H", "ping_sweep"),
    ("I", "P", "blind_syn_scan"),
    ("H", "P", "syn_scan"),
    ("P", "V", "version_scan"),
    ("P", "G", "default_creds"),
    ("V", "G", "known_cve"),
]
PROBS = {"ping_sweep": 0.95, "blind_syn_scan": 0.4, "syn_scan": 0.9,
         "version_scan": 0.85, "default_creds": 0.2, "known_cve": 0.7}


def main():
    g = AttackGraph(STATES, ACTIONS, PROBS)
    path = best_attack_path(g)
    state = g.initial
    for aid in path.actions:
        nxt = apply_transition(g, state, aid)
        print(f"{state} --{aid} ({g.probs[aid]:.2f})--> {nxt}")
        state = nxt
    print(f"success probability {path.success_prob:.4f}")


if __name__ == "__main__":
    main()
