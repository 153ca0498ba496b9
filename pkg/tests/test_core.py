import pytest
from hypothesis import given
from hypothesis import strategies as st

from scrc.core import (
    METHOD_CRC_ALL,
    METHOD_SCRC_I,
    METHOD_SCRC_T,
    NonSimplexError,
    OutOfRangeError,
    RiskSpec,
    ScoredExample,
    SelectiveOutput,
    ThresholdPair,
    TrialMetrics,
    ValidationError,
    validate_example,
)


class TestValidateExample:
    def test_symmetric_simplex_point_accepted(self):
        e = ScoredExample(probs=(0.5, 0.5), confidence=0.3, label=1)
        assert validate_example(e) is e

    def test_non_simplex_rejected(self):
        e = ScoredExample(probs=(0.7, 0.2, 0.2), confidence=0.5)
        with pytest.raises(NonSimplexError):
            validate_example(e)

    def test_confidence_out_of_range(self):
        e = ScoredExample(probs=(1.0, 0.0), confidence=1.2)
        with pytest.raises(OutOfRangeError):
            validate_example(e)

    def test_label_out_of_range(self):
        e = ScoredExample(probs=(0.5, 0.5), confidence=0.5, label=3)
        with pytest.raises(OutOfRangeError):
            validate_example(e)

    def test_simplex_tolerance_is_tight(self):
        validate_example(ScoredExample(probs=(0.5, 0.5 + 5e-10), confidence=0.5))
        with pytest.raises(NonSimplexError):
            validate_example(ScoredExample(probs=(0.5, 0.5 + 5e-9), confidence=0.5))

    def test_single_class_rejected(self):
        with pytest.raises(ValidationError):
            validate_example(ScoredExample(probs=(1.0,), confidence=0.5))


class TestRiskSpec:
    def test_valid(self):
        RiskSpec(coverage_target=1.0, risk_target=0.1, confidence_delta=0.05, grid_step=1.0)

    @pytest.mark.parametrize("kwargs", [
        {"coverage_target": 0.0, "risk_target": 0.1},
        {"coverage_target": 1.1, "risk_target": 0.1},
        {"coverage_target": 0.7, "risk_target": 0.0},
        {"coverage_target": 0.7, "risk_target": 1.0},
        {"coverage_target": 0.7, "risk_target": 0.1, "confidence_delta": 2.0},
        {"coverage_target": 0.7, "risk_target": 0.1, "grid_step": 0.0},
    ])
    def test_bounds_enforced(self, kwargs):
        with pytest.raises(OutOfRangeError):
            RiskSpec(**kwargs)


class TestThresholdPair:
    def test_xi_lcb_only_for_scrc_i(self):
        ThresholdPair(0.2, 0.5, METHOD_SCRC_I, xi_lcb=0.6)
        with pytest.raises(ValidationError):
            ThresholdPair(0.2, 0.5, METHOD_SCRC_T, xi_lcb=0.6)
        with pytest.raises(ValidationError):
            ThresholdPair(0.2, 0.5, METHOD_SCRC_I)

    def test_threshold_bounds(self):
        with pytest.raises(OutOfRangeError):
            ThresholdPair(-0.1, 0.5, METHOD_CRC_ALL)
        with pytest.raises(OutOfRangeError):
            ThresholdPair(0.1, 1.5, METHOD_CRC_ALL)

    def test_unknown_method(self):
        with pytest.raises(ValidationError):
            ThresholdPair(0.1, 0.5, "SCRC-X")


class TestSelectiveOutput:
    def test_abstain_token(self):
        out = SelectiveOutput.abstain()
        assert out.is_abstain
        assert out.to_token() == "ABSTAIN"
        assert SelectiveOutput.from_token("ABSTAIN") == out

    def test_prediction_sorted_unique(self):
        out = SelectiveOutput.prediction([3, 1, 2])
        assert out.labels == (1, 2, 3)
        with pytest.raises(ValidationError):
            SelectiveOutput.prediction([1, 1])
        with pytest.raises(OutOfRangeError):
            SelectiveOutput.prediction([0, 1])

    def test_empty_set_distinct_from_abstain(self):
        empty = SelectiveOutput.prediction([])
        assert not empty.is_abstain
        assert empty.set_size() == 0
        assert SelectiveOutput.from_token(empty.to_token()) == empty

    @given(st.sets(st.integers(min_value=1, max_value=50), max_size=12))
    def test_round_trip_bit_exact(self, labels):
        out = SelectiveOutput.prediction(labels)
        again = SelectiveOutput.from_token(out.to_token())
        assert again == out
        assert again.to_token() == out.to_token()

    def test_abstain_has_no_size(self):
        with pytest.raises(ValidationError):
            SelectiveOutput.abstain().set_size()


class TestTrialMetrics:
    def test_zero_selected_flag(self):
        m = TrialMetrics(
            selective_coverage=0.0, selective_risk=None,
            mean_set_size_selected=None, mean_set_size_rejected=2.0,
            n_selected=0,
        )
        assert m.zero_selected
        assert m.feasible
