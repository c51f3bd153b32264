#!/usr/bin/env python3
"""
Heisenberg Fractional Toolkit - Full Pipeline
Runs constants -> eigen -> lemmas -> solve in sequence, one process per step.

Usage:
    python run_all.py [CONFIG.json] [OUT_DIR]
"""

import subprocess
import sys
from datetime import datetime
from pathlib import Path

PROJECT_DIR = Path(__file__).parent
LOG_DIR = PROJECT_DIR / "logs"
LOG_DIR.mkdir(exist_ok=True)

STEP_TIMEOUT = 3600  # 1 hour per step

# CLI exit codes that still leave usable outputs
SOFT_FAILURES = {2: "inconclusive or failing checks"}


def log(message: str):
    """Log with timestamp"""
    timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
    print(f"[{timestamp}] {message}", flush=True)


def run_step(name: str, args: list) -> int:
    """Run one CLI command and return its exit code (-1 on timeout or launch error)"""
    log(f"Starting: {name}")

    try:
        result = subprocess.run(
            [sys.executable, "-m", "heisenberg.cli"] + args,
            cwd=PROJECT_DIR,
            capture_output=True,
            text=True,
            timeout=STEP_TIMEOUT
        )
    except subprocess.TimeoutExpired:
        log(f"✗ {name} timed out after {STEP_TIMEOUT // 60} minutes")
        return -1
    except Exception as e:
        log(f"✗ {name} error: {e}")
        return -1

    if result.returncode == 0:
        log(f"✓ {name} completed successfully")
        if result.stdout:
            lines = result.stdout.strip().split('\n')
            for line in lines[-5:]:
                log(f"  {line}")
    elif result.returncode in SOFT_FAILURES:
        log(f"⚠️ {name}: {SOFT_FAILURES[result.returncode]} (code {result.returncode})")
    else:
        log(f"✗ {name} failed with code {result.returncode}")
        if result.stderr:
            log(f"  Error: {result.stderr[-500:]}")
    return result.returncode


def main():
    """Run the full pipeline"""
    config_file = sys.argv[1] if len(sys.argv) > 1 else None
    out_dir = sys.argv[2] if len(sys.argv) > 2 else str(PROJECT_DIR / "data" / datetime.now().strftime("%Y%m%d"))
    common = ["--out", out_dir] + (["--config", config_file] if config_file else [])

    log("=" * 60)
    log("HEISENBERG FULL RUN")
    log("=" * 60)

    # Step 1: constants (bubble spec reused by the lemma sweeps)
    if run_step("Constants", ["constants"] + common) != 0:
        log("✗ Constants failed - cannot run lemma sweeps")
        return 1

    # Step 2: eigenpair
    if run_step("Eigenpair", ["eigen"] + common) != 0:
        log("✗ Eigen solve failed - lambda_1 unavailable")
        return 1

    # Step 3: lemma checks
    code = run_step("Lemma Checks", ["lemmas", "--bubble", str(Path(out_dir) / "bubble_spec.json")] + common)
    if code not in (0, 2):
        return 1

    # Step 4: discrete solution
    if run_step("Solve", ["solve"] + common) != 0:
        log("✗ Solve failed")
        return 1

    log("=" * 60)
    log("✓ FULL RUN COMPLETE" if code == 0 else "⚠️ FULL RUN COMPLETE WITH FAILING CHECKS")
    log("=" * 60)

    return 0


if __name__ == "__main__":
    sys.exit(main())
