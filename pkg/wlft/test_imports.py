#!/usr/bin/env python3
"""
Test that all modules can be imported without errors.
This validates the code structure without touching any dataset.
"""

import importlib

MODULES = [
    "errors",
    "autograd",
    "wavelets",
    "config",
    "backbone",
    "model",
    "netpbm",
    "preprocessing",
    "dataset",
    "synth",
    "metrics",
    "checkpoint",
    "events",
    "train",
    "diagnostics",
    "main",
]


def test_imports():
    print("Testing imports...")
    print("-" * 50)
    for name in MODULES:
        print(f"Importing {name}...")
        importlib.import_module(name)
        print(f"✅ {name} imported successfully")


def test_parser_lists_every_command():
    from main import build_parser

    parser = build_parser()
    commands = parser._subparsers._group_actions[0].choices
    assert set(commands) == {"train", "eval", "decompose", "gradcheck", "synth", "sweep"}


if __name__ == "__main__":
    try:
        test_imports()
        test_parser_lists_every_command()
        print()
        print("=" * 50)
        print("✅ All imports successful!")
        print("=" * 50)
    except Exception as e:
        print(f"\n❌ Import failed: {e}")
        import traceback
        traceback.print_exc()
        exit(1)
