"""
Command-line walkthrough
========================

The same experiment as demo 02, driven through the ``mipsplat`` command:
write a synthetic dataset, train two models, sweep both across zoom
factors. Each step is an ordinary subprocess call, so the commands printed
below can be pasted into a shell.
"""

import os
import shlex
import subprocess
import sys

root = os.path.join(os.path.dirname(os.path.abspath(__file__)), "out", "cli")
data = os.path.join(root, "data")


def run(*args):
    cmd = [sys.executable, "-m", "mipsplat", *args]
    print("$ mipsplat " + " ".join(shlex.quote(a) for a in args), flush=True)
    code = subprocess.run(cmd).returncode
    if code:
        sys.exit(f"exit code {code}")


# a small dataset keeps this under a minute
run("toy", "--out", data, "--primitives", "100", "--views", "12", "--test-views", "3", "--size", "64",
    "--supersample", "4")

for name, flags in {"dilation": ["--filter", "dilation", "--smooth3d", "0"], "mip": ["--filter", "mip"]}.items():
    out = os.path.join(root, name)
    run("train", "--scene", os.path.join(data, "init.ply"), "--cameras", os.path.join(data, "train/transforms.json"),
        "--test-cameras", os.path.join(data, "test/transforms.json"), "--iterations", "600", "--out", out, *flags)
    # scales below 1/2 would leave fewer pixels than the 11 px SSIM window
    run("sweep", "--scene", os.path.join(out, "scene.ply"), "--test-cameras", os.path.join(data, "test/transforms.json"),
        "--rates", os.path.join(out, "rates.npy"), "--scales", "1/2,1,2,4", "--out", out, *flags)

# an unknown filter name is a usage error: exit code 1
code = subprocess.run([sys.executable, "-m", "mipsplat", "render", "--filter", "box", "--out", root],
                      capture_output=True).returncode
print(f"\n'--filter box' exits with code {code}")
