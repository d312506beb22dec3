"""Regenerate the committed CSV fixtures from the solver CLI.

Run from the repository root with the delayopt package installed:

    python plots/tools/generate_fixtures.py

Writes into plots/tests/data/: the example-1 trajectory trio and the four
extended-horizon fields behind the heatmaps (target plus the states at the
published controls of the three space-time examples).
"""
import shutil
import sys
import tempfile
from pathlib import Path

from delayopt.cli import cmd_simulate, parse_config_text
from delayopt.configs import EXAMPLES
from delayopt.model import ControlVector

DATA = Path(__file__).resolve().parent.parent / "tests" / "data"

TABLE1 = ControlVector.of([0.0, 0.9367, 6.7481, 28.3843, 32.2258, 39.8133],
                          [0.9846, -1.5039, 0.4542, -2.2799, 3.7013, -1.3844])
TABLE2 = ControlVector.of([2.2785, 4.8126], [-8.2564, -5.2898], 2.3775)
TABLE3 = ControlVector.of([1.8308, 7.0918, 28.3354, 36.1215],
                          [-2.1661, 2.2636, -1.7753, 1.7550], -2.5013)


def main() -> int:
    DATA.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)

        config1 = parse_config_text(EXAMPLES["example1"])
        cmd_simulate(config1, ControlVector.of([1.2409], [-1.7668]), tmp / "opt")
        cmd_simulate(config1, ControlVector.of([1.0], [-1.5707963267948966]), tmp / "unc")
        shutil.copy(tmp / "opt" / "target.csv", DATA / "example1_target.csv")
        shutil.copy(tmp / "opt" / "state.csv", DATA / "example1_optimal.csv")
        shutil.copy(tmp / "unc" / "state.csv", DATA / "example1_uncontrolled.csv")

        for name, control in (("example2", TABLE1), ("example3", TABLE2), ("example4", TABLE3)):
            config = parse_config_text(EXAMPLES[name])
            cmd_simulate(config, control, tmp / name, extend=True)
            shutil.copy(tmp / name / "state_extended.csv", DATA / f"{name}_state_extended.csv")
            if name == "example2":
                shutil.copy(tmp / name / "target_extended.csv", DATA / "target_extended.csv")
    print(f"fixtures written to {DATA}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
