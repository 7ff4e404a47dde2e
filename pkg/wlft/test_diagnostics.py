"""
End-to-end gradient check of the composed model.
"""

import pytest

from config import TapPosition, Variant
from diagnostics import THRESHOLD, group_of, run_gradcheck
from errors import ConfigError, GradCheckError


def test_group_names():
    assert group_of("backbone.stage2.0.conv1.weight") == "backbone.stage2"
    assert group_of("branch.level1.predictor.conv1.bias") == "branch.level1"
    assert group_of("head.weight") == "head"


@pytest.mark.parametrize("variant", list(Variant))
def test_gradients_agree_for_every_variant(variant):
    groups = run_gradcheck(variant=variant, tap=TapPosition.POS2, max_entries=4)
    names = {g.group for g in groups}
    assert {"backbone.stem", "backbone.stage4", "head"} <= names
    assert ("branch.level1" in names) == (variant != Variant.BACKBONE_ONLY)
    assert all(g.max_rel_error < THRESHOLD for g in groups)
    assert sum(g.checked for g in groups) > 0


def test_branch_at_stem_tap():
    groups = run_gradcheck(tap=TapPosition.POS1, levels=1, max_entries=3)
    assert any(g.group == "branch.level1" for g in groups)


def test_corrupted_backward_is_reported():
    with pytest.raises(GradCheckError) as excinfo:
        run_gradcheck(variant=Variant.BACKBONE_ONLY, max_entries=2, corrupt_backward=True)
    assert excinfo.value.exit_code == 5
    assert excinfo.value.offenders[0][0] == "head"
    assert excinfo.value.offenders[0][1] > THRESHOLD


def test_tap_without_levels_is_a_config_error():
    with pytest.raises(ConfigError):
        run_gradcheck(tap=TapPosition.POS5)
