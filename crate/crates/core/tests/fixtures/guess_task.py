"""Guess-the-number task speaking the line-delimited JSON protocol."""
import json
import sys

target = None
steps = 0
total = 0.0
solved = False

for line in sys.stdin:
    req = json.loads(line)
    kind = req.get("type")
    if kind == "reset":
        target = 3 + int(req["instance"])
        steps, total, solved = 0, 0.0, False
        reply = {"observations": {"agent": "Guess a number between 1 and 9."}}
    elif kind == "step":
        guess = req["actions"].get("agent", "").strip()
        if not guess.isdigit():
            reply = {"error": "not a number: %r" % guess}
        else:
            steps += 1
            value = int(guess)
            solved = value == target
            reward = 1.0 if solved else 0.0
            total += reward
            hint = "correct" if solved else ("higher" if value < target else "lower")
            reply = {"outcomes": {"agent": {
                "observation": hint,
                "reward": reward,
                "terminated": solved,
                "truncated": steps >= 3 and not solved,
            }}}
    elif kind == "score":
        reply = {"return": total, "success": solved}
    else:
        reply = {"error": "unknown request"}
    sys.stdout.write(json.dumps(reply) + "\n")
    sys.stdout.flush()
