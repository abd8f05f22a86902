"""Subcommand behavior, exit codes, and output formats."""

import numpy as np
import pytest

from crfidsim import cli, enroll, puf
from crfidsim.layout import DEFAULT_LAYOUT


def run_cli(capsys, *argv):
    code = cli.run(list(argv))
    return code, capsys.readouterr()


def rows_of(section, text):
    """Data rows of one '#'-marked section (header row skipped)."""
    lines = text.strip().split("\n")
    start = lines.index(f"# {section}")
    out = []
    for line in lines[start + 2 :]:
        if line.startswith("#"):
            break
        out.append(line.split("\t"))
    return out


class TestEnroll:
    def test_single_device_row(self, capsys):
        code, cap = run_cli(capsys, "enroll", "--seed", "11")
        assert code == 0
        rows = rows_of("enroll", cap.out)
        assert len(rows) == 1
        dev, blocks, bits, eff = rows[0]
        assert dev == "dev-0011"
        assert int(bits) == int(blocks) * 248
        device = puf.synth_device(seed=11)
        record = enroll.enroll_device(device, "dev-0011")
        assert int(blocks) == len(record.crp_map)
        assert eff == f"{100 * enroll.efficiency(record.crp_map):.3g}"

    def test_batch_meets_two_block_floor(self, capsys):
        code, cap = run_cli(capsys, "enroll", "--seed", "100", "--devices", "20")
        assert code == 0
        rows = rows_of("enroll", cap.out)
        assert len(rows) == 20
        assert all(int(r[1]) >= 2 for r in rows)

    def test_noiseless_device_maximal_blocks(self, capsys, tmp_path):
        device = puf.synth_device(stable_frac=1.0, noisy_epsilon=0.0, seed=5)
        dump = puf.collect_dump(device, 5, temperatures=(0.0, 25.0, 40.0),
                                readouts_per_temp=3)
        path = tmp_path / "clean.dump"
        puf.write_dump(str(path), dump)

        # independent block-count oracle straight from the cell probabilities
        bits = (device.cell_one_prob > 0.5).astype(int)
        lo = DEFAULT_LAYOUT.eligible_start
        hi = lo + DEFAULT_LAYOUT.eligible_bytes
        weights = bits[8 * lo : 8 * hi].reshape(-1, 8).sum(axis=1)
        expected = int(np.count_nonzero(weights == 4)) // enroll.BLOCK_BYTES

        code, cap = run_cli(capsys, "enroll", "--device", f"dump:{path}")
        assert code == 0
        assert int(rows_of("enroll", cap.out)[0][1]) == expected

    def test_empty_dump_clean_error(self, capsys, tmp_path):
        path = tmp_path / "empty.dump"
        path.write_bytes(b"")
        code, cap = run_cli(capsys, "enroll", "--device", f"dump:{path}")
        assert code == 3
        assert "error:" in cap.err
        assert "Traceback" not in cap.err

    def test_batch_requires_synthetic(self, capsys, tmp_path):
        path = tmp_path / "x.dump"
        path.write_bytes(b"")
        code, cap = run_cli(
            capsys, "enroll", "--device", f"dump:{path}", "--devices", "3"
        )
        assert code == 3

    def test_out_dir_record_round_trip(self, capsys, tmp_path):
        code, cap = run_cli(
            capsys, "enroll", "--seed", "11", "--out", str(tmp_path)
        )
        assert code == 0
        record_file = tmp_path / "dev-0011.record.txt"
        assert record_file.exists()
        assert (tmp_path / "enroll.tsv").exists()
        parsed = enroll.record_from_text(record_file.read_text())
        assert parsed.device_id == "dev-0011"
        assert len(parsed.crp_map) >= 2


class TestUpdate:
    def test_clean_commit(self, capsys):
        code, cap = run_cli(
            capsys, "update", "--seed", "11", "--image", "boot-shim"
        )
        assert code == 0
        (row,) = rows_of("update", cap.out)
        assert row[1] == "COMMITTED"
        assert row[2] == "8"
        assert row[3] == "-"
        assert "# committed\t1/1" in cap.out

    def test_all_demo_images_commit(self, capsys):
        for image in ("blinky", "sense", "boot-shim"):
            code, cap = run_cli(
                capsys, "update", "--seed", "11", "--image", image
            )
            assert code == 0, image

    def test_tampered_mac_rejected_every_trial(self, capsys):
        code, cap = run_cli(
            capsys, "update", "--seed", "11", "--image", "boot-shim",
            "--tamper", "mac", "--trials", "3",
        )
        assert code == 10
        rows = rows_of("update", cap.out)
        assert [r[1] for r in rows] == ["REJECTED_BY_TOKEN"] * 3

    def test_tampered_chunk_rejected(self, capsys):
        code, cap = run_cli(
            capsys, "update", "--seed", "11", "--image", "boot-shim",
            "--tamper", "chunk:0",
        )
        assert code == 10

    def test_dropped_frame_times_out(self, capsys):
        code, cap = run_cli(
            capsys, "update", "--seed", "11", "--image", "boot-shim",
            "--tamper", "drop:4",
        )
        assert code == 13
        assert rows_of("update", cap.out)[0][1] == "TIMEOUT"

    def test_bad_tamper_and_bad_image(self, capsys):
        code, _ = run_cli(capsys, "update", "--tamper", "bogus")
        assert code == 3
        code, _ = run_cli(capsys, "update", "--image", "/no/such/file")
        assert code == 3

    def test_powered_close_range_commits(self, capsys):
        code, cap = run_cli(
            capsys, "update", "--seed", "11", "--image", "blinky",
            "--distance-cm", "20", "--sleep-ms", "30", "--trials", "5",
        )
        assert code == 0
        rows = rows_of("update", cap.out)
        committed = sum(r[1] == "COMMITTED" for r in rows)
        assert committed >= 4
        assert all(float(r[3]) > 0 for r in rows if r[1] == "COMMITTED")

    def test_powered_far_range_browns_out(self, capsys):
        code, cap = run_cli(
            capsys, "update", "--seed", "11", "--image", "blinky",
            "--distance-cm", "80", "--sleep-ms", "0", "--trials", "4",
        )
        rows = rows_of("update", cap.out)
        assert any(r[1] == "BROWNOUT_ABORTED" for r in rows)
        browned = [r for r in rows if r[1] == "BROWNOUT_ABORTED"]
        assert all(r[2] == "0" for r in browned)   # no frames ever sent
        assert code in (0, 12)

    def test_smaller_image_no_worse_under_power(self, capsys):
        def committed(image):
            _, cap = run_cli(
                capsys, "update", "--seed", "11", "--image", image,
                "--distance-cm", "40", "--sleep-ms", "0", "--trials", "40",
            )
            return sum(r[1] == "COMMITTED" for r in rows_of("update", cap.out))

        small = committed("boot-shim")   # 223 bytes
        large = committed("blinky")      # 399 bytes
        assert 0 < small < 40
        assert small >= large

    def test_transcript_file_decodable(self, capsys, tmp_path):
        code, _ = run_cli(
            capsys, "update", "--seed", "11", "--image", "boot-shim",
            "--out", str(tmp_path),
        )
        assert code == 0
        from crfidsim.gen2 import decode, frame_from_hex

        lines = (tmp_path / "transcript-0.txt").read_text().strip().split("\n")
        assert len(lines) == 8
        for line in lines:
            decode(frame_from_hex(line))

    def test_deterministic_under_seed(self, capsys):
        argv = ("update", "--seed", "7", "--image", "sense",
                "--distance-cm", "40", "--sleep-ms", "10", "--trials", "6")
        _, first = run_cli(capsys, *argv)
        _, second = run_cli(capsys, *argv)
        assert first.out == second.out


class TestAnalyze:
    @pytest.fixture(scope="class")
    def report(self, request):
        capsys = request.getfixturevalue("capsys")
        code, cap = run_cli(capsys, "analyze", "--seed", "11")
        assert code == 0
        return cap.out

    def test_p_fail_reference_point(self, capsys):
        _, cap = run_cli(capsys, "analyze", "--seed", "11", "--trials", "2")
        rows = {r[0]: r[1] for r in rows_of("p_fail_vs_ber", cap.out)}
        assert rows["0.0094"] == "0.00160318"

    def test_entropy_section(self, capsys):
        _, cap = run_cli(capsys, "analyze", "--seed", "11", "--trials", "2")
        rows = {r[0]: r[1] for r in rows_of("residual_min_entropy", cap.out)}
        assert rows["0.5"] == "128"
        assert rows["0.5374"].startswith("102.191")
        assert float(rows["0.501"]) == float(rows["0.499"])
        ordered = [float(rows[b]) for b in ("0.5", "0.501", "0.51", "0.5374", "0.55")]
        assert ordered == sorted(ordered, reverse=True)

    def test_ber_and_bias_sections(self, capsys):
        _, cap = run_cli(capsys, "analyze", "--seed", "11", "--trials", "4")
        for _, raw, pipe in rows_of("ber_vs_temperature", cap.out):
            assert float(pipe) <= 0.0094
            assert float(pipe) < float(raw)
        bias = {r[0]: float(r[1]) for r in rows_of("bias", cap.out)}
        assert abs(bias["pipeline"] - 0.499) < 0.005
        assert abs(bias["raw"] - 0.5) < 0.01

    def test_toy_code_flag(self, capsys):
        code, cap = run_cli(
            capsys, "analyze", "--seed", "11", "--trials", "2",
            "--code", "7,4,1", "--blocks", "1",
        )
        assert code == 0
        rows = {r[0]: r[1] for r in rows_of("residual_min_entropy", cap.out)}
        assert rows["0.5"] == "4"   # k - 0 helper leak at b = 1/2

    def test_bad_code_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.run(["analyze", "--code", "9,9,9"])
        assert exc.value.code == 2


class TestAttack:
    def test_toy_coset_enumeration(self, capsys):
        code, cap = run_cli(capsys, "attack", "--seed", "3")
        assert code == 0
        lines = dict(
            line.split("\t") for line in cap.out.strip().split("\n")
            if "\t" in line
        )
        assert lines["candidates"] == "16"
        assert lines["expected"] == "2^4 = 16"
        assert lines["true_response_in_candidates"] == "yes"
        assert lines["tampered_helper_overlap"] == "0"
        assert lines["brute_force_complexity"] == "2^128"

    def test_full_scale_code_refused(self, capsys):
        code, cap = run_cli(capsys, "attack", "--seed", "3", "--code", "31,16,3")
        assert code == 3
        assert "toy code" in cap.err

    def test_deterministic(self, capsys):
        _, a = run_cli(capsys, "attack", "--seed", "9")
        _, b = run_cli(capsys, "attack", "--seed", "9")
        assert a.out == b.out


def test_exit_code_map_is_total():
    from crfidsim.protocol import UpdateOutcome

    assert set(cli.OUTCOME_EXIT) == set(UpdateOutcome)
    assert sorted(cli.OUTCOME_EXIT.values()) == [0, 10, 11, 12, 13]
