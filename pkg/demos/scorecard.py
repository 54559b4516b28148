"""Print the capability comparison for the bundled tools, then probe this
engine and add it as a sixth column.

    python demos/scorecard.py
"""

from horizon.scorecard import bundled_assessments, check_compliance, derive_level, render_report
from horizon.selfassess import self_assess


def main():
    tools = bundled_assessments()
    ours = self_assess(tool="horizon")
    print(render_report([*tools, ours], "markdown"))
    for a in [*tools, ours]:
        c = check_compliance(a)
        gaps = ", ".join(c.gaps) or "none"
        print(f"{a.tool:<14} {derive_level(a)}  gaps: {gaps}")

    degraded = self_assess(watcher=False, tool="horizon-no-watch")
    print(f"\nwithout the pricing watcher: {derive_level(degraded)}, "
          f"gaps: {', '.join(check_compliance(degraded).gaps)}")


if __name__ == "__main__":
    main()
