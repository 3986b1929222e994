"""EDF writer/parser round trips, header validation offsets, and TAL decoding."""

import numpy as np
import pytest

from sst.edf import (
    EdfHeader,
    EdfSignalHeader,
    Hypnogram,
    parse_edf,
    parse_tal_annotations,
    write_edf,
)
from sst.errors import DataError, ParseError


def one_signal_header(n_records=2, spr=3, duration=1.0):
    sig = EdfSignalHeader(
        label="EEG Fpz-Cz", transducer="AgAgCl electrode", phys_dim="uV",
        phys_min=-1.0, phys_max=1.0, dig_min=-100, dig_max=100,
        prefilter="HP:0.5Hz", samples_per_record=spr,
    )
    return EdfHeader(
        version="0", patient="X F X X", recording="Startdate 01-JAN-01",
        start_date="01.01.01", start_time="00.00.00",
        header_bytes=512, reserved="", n_records=n_records,
        record_duration_s=duration, n_signals=1, signals=[sig],
    )


class TestRoundTrip:
    def test_single_signal_values(self):
        header = one_signal_header()
        digital = [np.array([-100, 0, 100, 50, -50, 25], dtype=np.int16)]
        blob = write_edf(header, digital)
        parsed, traces, warnings = parse_edf(blob)
        assert warnings == []
        assert parsed == header
        np.testing.assert_array_equal(traces[0].digital, digital[0])
        # hand-computed scalings: gain = 2/200 = 0.01, offset -1 at -100
        np.testing.assert_allclose(
            traces[0].samples, [-1.0, 0.0, 1.0, 0.5, -0.5, 0.25], atol=1e-15
        )
        assert traces[0].fs == 3.0
        assert traces[0].label == "EEG Fpz-Cz"

    def test_digital_min_maps_to_physical_min(self):
        header = one_signal_header(n_records=1)
        blob = write_edf(header, [np.array([-100, -100, -100], dtype=np.int16)])
        _, traces, _ = parse_edf(blob)
        np.testing.assert_allclose(traces[0].samples, -1.0, atol=1e-15)

    def test_multi_signal_interleave(self, rng):
        sig_a = EdfSignalHeader(
            label="EEG A", transducer="", phys_dim="uV", phys_min=-10.0, phys_max=10.0,
            dig_min=-2048, dig_max=2047, prefilter="", samples_per_record=3,
        )
        sig_b = EdfSignalHeader(
            label="EEG B", transducer="", phys_dim="uV", phys_min=-5.0, phys_max=5.0,
            dig_min=-512, dig_max=511, prefilter="", samples_per_record=2,
        )
        header = EdfHeader(
            version="0", patient="p", recording="r", start_date="02.03.04",
            start_time="05.06.07", header_bytes=768, reserved="", n_records=3,
            record_duration_s=2.0, n_signals=2, signals=[sig_a, sig_b],
        )
        dig_a = rng.integers(-2048, 2048, size=9).astype(np.int16)
        dig_b = rng.integers(-512, 512, size=6).astype(np.int16)
        blob = write_edf(header, [dig_a, dig_b])
        parsed, traces, _ = parse_edf(blob)
        assert parsed == header
        np.testing.assert_array_equal(traces[0].digital, dig_a)
        np.testing.assert_array_equal(traces[1].digital, dig_b)
        assert traces[0].fs == 1.5
        assert traces[1].fs == 1.0

    def test_write_parse_write_is_stable(self):
        header = one_signal_header()
        digital = [np.arange(6, dtype=np.int16)]
        blob = write_edf(header, digital)
        parsed, traces, _ = parse_edf(blob)
        again = write_edf(parsed, [traces[0].digital])
        assert again == blob

    def test_writer_rejects_out_of_range(self):
        header = one_signal_header(n_records=1)
        with pytest.raises(DataError):
            write_edf(header, [np.array([0, 0, 2000], dtype=np.int16)])

    def test_writer_rejects_wrong_length(self):
        header = one_signal_header(n_records=2)
        with pytest.raises(DataError):
            write_edf(header, [np.zeros(5, dtype=np.int16)])


class TestParseErrors:
    def blob(self):
        return write_edf(one_signal_header(), [np.arange(6, dtype=np.int16)])

    def test_too_short(self):
        with pytest.raises(ParseError) as err:
            parse_edf(b"0       ")
        assert err.value.offset is not None

    def test_cut_mid_record(self):
        blob = self.blob()
        with pytest.raises(ParseError) as err:
            parse_edf(blob[:-3])
        assert err.value.offset is not None
        assert "offset" in str(err.value)

    def test_non_numeric_field(self):
        blob = bytearray(self.blob())
        blob[184:192] = b"XXXXXXXX"  # header_bytes field
        with pytest.raises(ParseError) as err:
            parse_edf(bytes(blob))
        assert err.value.offset == 184

    def test_header_bytes_mismatch(self):
        blob = bytearray(self.blob())
        blob[184:192] = b"768     "
        with pytest.raises(ParseError, match="header_bytes"):
            parse_edf(bytes(blob))

    def test_digital_range_inverted(self):
        blob = bytearray(self.blob())
        # dig_min field of signal 0 starts at 256 + 16 + 80 + 8 + 8 + 8 = 376
        blob[376:384] = b"100     "
        with pytest.raises(ParseError, match="digital min"):
            parse_edf(bytes(blob))

    def test_lenient_repairs_padded_numeric(self):
        blob = bytearray(self.blob())
        blob[236:244] = b"2 rec   "  # n_records field
        with pytest.raises(ParseError):
            parse_edf(bytes(blob))
        _, _, warnings = parse_edf(bytes(blob), strict=False)
        assert any("n_records" in w for w in warnings)

    def test_lenient_replaces_non_ascii(self):
        blob = bytearray(self.blob())
        blob[8] = 0xFF  # patient field
        with pytest.raises(ParseError):
            parse_edf(bytes(blob))
        _, _, warnings = parse_edf(bytes(blob), strict=False)
        assert any("patient" in w for w in warnings)


class TestTal:
    def test_documented_fixture(self):
        hyp = parse_tal_annotations(b"+0\x1530\x14Sleep stage W\x14\x00")
        assert hyp.entries == [(0.0, 30.0, 0)]

    def test_stage_four_merges_into_n3(self):
        hyp = parse_tal_annotations(b"+30\x1560\x14Sleep stage 4\x14\x00")
        assert hyp.entries == [(30.0, 60.0, 3)]

    def test_empty_records_skipped(self):
        assert parse_tal_annotations(b"\x00\x00\x00").entries == []

    def test_multiple_records(self):
        blob = b"+0\x1560\x14Sleep stage W\x14\x00+60\x1530\x14Sleep stage R\x14\x00"
        hyp = parse_tal_annotations(blob)
        assert hyp.entries == [(0.0, 60.0, 0), (60.0, 30.0, 4)]

    def test_unknown_text_ignored(self):
        hyp = parse_tal_annotations(b"+0\x1530\x14Lights off\x14\x00")
        assert hyp.entries == []

    def test_unscored_maps_to_none(self):
        hyp = parse_tal_annotations(b"+0\x1530\x14Sleep stage ?\x14\x00")
        assert hyp.entries == [(0.0, 30.0, None)]

    def test_missing_onset_sign(self):
        with pytest.raises(ParseError, match="record 0"):
            parse_tal_annotations(b"0\x1530\x14Sleep stage W\x14\x00")

    def test_stage_without_duration(self):
        with pytest.raises(ParseError, match="duration"):
            parse_tal_annotations(b"+0\x14Sleep stage W\x14\x00")

    def test_unterminated_annotation(self):
        with pytest.raises(ParseError, match="record 0"):
            parse_tal_annotations(b"+0\x1530\x14Sleep stage W\x00")

    def test_record_index_in_error(self):
        blob = b"+0\x1530\x14Sleep stage W\x14\x00bad\x14\x00"
        with pytest.raises(ParseError, match="record 1"):
            parse_tal_annotations(blob)


class TestHypnogram:
    def test_sorted_on_construction(self):
        hyp = Hypnogram([(60.0, 30.0, 1), (0.0, 60.0, 0)])
        assert [e[0] for e in hyp.entries] == [0.0, 60.0]

    def test_overlap_rejected(self):
        with pytest.raises(DataError, match="overlap"):
            Hypnogram([(0.0, 60.0, 0), (30.0, 30.0, 1)])

    def test_span_lookup(self):
        hyp = Hypnogram([(0.0, 60.0, 0), (60.0, 30.0, 2)])
        assert hyp.stage_for_span(0.0, 30.0) == 0
        assert hyp.stage_for_span(30.0, 60.0) == 0
        assert hyp.stage_for_span(60.0, 90.0) == 2
        assert hyp.stage_for_span(45.0, 75.0) is None
        assert hyp.stage_for_span(90.0, 120.0) is None
