import json
import os

LR = 0.5  # learning rate
NAME = "base"
OFFSET = 0.9863


def main():
    objective = OFFSET if NAME == "base" else OFFSET + LR
    with open(os.environ["HPO_RESULT_FILE"], "w") as fh:
        json.dump({"status": "ok", "objective": objective}, fh)


main()
