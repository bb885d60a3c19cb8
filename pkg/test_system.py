#!/usr/bin/env python3
"""
Quick system test to verify the ARC toolkit is working.
"""

import sys

from arcconv.analysis.equivalence_check import check_equivalence
from arcconv.analysis.gradient_check import gradcheck


def test_system() -> bool:
    """Run the cheapest checks of the verification suite."""
    print("🧪 Testing ARC Convolution Toolkit")
    print("=" * 40)

    try:
        reports = [gradcheck("rotation"), gradcheck("arc-layer"), check_equivalence()]
        for report in reports:
            mark = "✅" if report.passed else "❌"
            print(f"{mark} {report.name}: {report.metric_name} = {report.metric:.3e}")
        return all(report.passed for report in reports)

    except Exception as e:
        print(f"\n💥 Test ERROR: {str(e)}")
        return False


def main():
    """Main test function."""
    if test_system():
        print("\n🎉 System is working correctly!")
        print("\nNext steps:")
        print("1. Run 'python -m arcconv verify' for the full check suite")
        print("2. Run 'python -m arcconv train --out metrics.csv' to train the toy network")
        print("3. Run 'python -m arcconv estimate --scaling' for the ResNet-50 cost table")
        sys.exit(0)
    else:
        print("\n❌ System test failed.")
        sys.exit(1)


if __name__ == "__main__":
    main()
