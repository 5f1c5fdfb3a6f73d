import pytest

from geoshoot import make_phantom, read_field, read_image, write_image
from geoshoot.cli import main, parse_config, report_complexity


def parse(argv):
    return parse_config(argv)


class TestParseConfig:
    def test_phantom_defaults(self):
        config = parse(["--phantom", "blobs:16"])
        assert config.variant == "state"
        assert config.bands == (16,)
        assert config.alpha == 3.0 and config.s == 2 and config.sigma == 1.0
        assert config.nt == 10 and config.iters == 10

    def test_band_exceeding_grid_rejected(self):
        with pytest.raises(ValueError, match="exceeds the grid"):
            parse(["--phantom", "blobs:16", "--bands", "32"])

    def test_missing_inputs_rejected(self):
        with pytest.raises(ValueError, match="phantom"):
            parse(["--bands", "8"])

    def test_bad_phantom_spec(self):
        with pytest.raises(ValueError, match="NAME:SIZE"):
            parse(["--phantom", "blobs"])
        with pytest.raises(ValueError, match="unknown phantom pair"):
            parse(["--phantom", "squares:16"])

    def test_config_file_and_flag_precedence(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("phantom=blobs:16\nbands=4,6\nsigma=0.5\n")
        config = parse(["--config", str(cfg)])
        assert config.bands == (4, 6) and config.sigma == 0.5
        config = parse(["--config", str(cfg), "--sigma", "2.0"])
        assert config.sigma == 2.0  # flags override file values
        assert config.bands == (4, 6)

    def test_unknown_config_key_lists_valid_keys(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("phantom=blobs:16\nbogus=1\n")
        with pytest.raises(ValueError, match="valid keys"):
            parse(["--config", str(cfg)])

    def test_environment_overrides(self, tmp_path, monkeypatch):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("phantom=blobs:16\nsigma=0.5\n")
        monkeypatch.setenv("GEOSHOOT_SIGMA", "0.25")
        config = parse(["--config", str(cfg)])
        assert config.sigma == 0.25  # env beats the file
        config = parse(["--config", str(cfg), "--sigma", "4.0"])
        assert config.sigma == 4.0  # flags beat the env

    def test_missing_image_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="does not exist"):
            parse(["--source", str(tmp_path / "a.img"), "--target", str(tmp_path / "b.img")])


class TestRunRegistration:
    def test_identical_source_and_target(self, tmp_path):
        img = tmp_path / "img.img"
        write_image(img, make_phantom("gaussian-blob", (16, 16)))
        out = tmp_path / "out"
        code = main(["--source", str(img), "--target", str(img),
                     "--bands", "6", "--out", str(out)])
        assert code == 0
        csv = (out / "band_6" / "convergence.csv").read_text().splitlines()
        assert csv[0] == "iter,energy,mse_rel,grad_inf_rel,cg_iters,step,wall_time_s"
        assert len(csv) == 2  # converged immediately
        assert csv[1].split(",")[2] == "0"  # mse_rel column is zero

    def test_sweep_writes_consistent_directories(self, tmp_path):
        out = tmp_path / "sweep"
        code = main(["--phantom", "blobs:16", "--bands", "4,6,8",
                     "--iters", "2", "--out", str(out)])
        assert code == 0
        expected = {"convergence.csv", "warped.img", "displacement.fld",
                    "initial_velocity.vel", "summary.txt", "config.txt"}
        for b in (4, 6, 8):
            assert set(p.name for p in (out / f"band_{b}").iterdir()) == expected
        assert (out / "config.txt").exists()
        # outputs are readable with the package loaders
        warped = read_image(out / "band_4" / "warped.img")
        assert warped.grid_sizes == (16, 16)
        disp = read_field(out / "band_4" / "displacement.fld")
        assert disp.components.shape == (2, 16, 16)

    def test_monotone_mse_on_registration_fixture(self, tmp_path):
        out = tmp_path / "circle"
        code = main(["--phantom", "circle-c:48", "--bands", "12",
                     "--iters", "4", "--out", str(out)])
        assert code == 0
        rows = (out / "band_12" / "convergence.csv").read_text().splitlines()[1:]
        mse_col = [float(r.split(",")[2]) for r in rows]
        assert all(b <= a for a, b in zip(mse_col, mse_col[1:]))

    def test_error_funnel_returns_nonzero(self, tmp_path):
        code = main(["--phantom", "blobs:banana"])
        assert code == 1


class TestComplexityReport:
    def test_counts_scale_as_band_squared_and_variant_ordering(self, capsys):
        config = parse(["--phantom", "blobs:16", "--bands", "4,8",
                        "--complexity-report"])
        assert report_complexity(config) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        rows = {}
        for line in lines[1:]:
            cells = line.split()
            rows[int(cells[0])] = [int(c) for c in cells[1:5]]
        assert rows[8][0] == 4 * rows[4][0]  # state coefficients ~ B^2
        assert rows[8][2] == 4 * rows[4][2]  # deformation coefficients ~ B^2
        for b in (4, 8):
            assert rows[b][3] < rows[b][1]  # deformation stores fewer scalars

    def test_velocity_storage_halves_with_nt(self):
        from geoshoot import gradient
        from conftest import blob_problem

        full = blob_problem("state", grid=(16, 16), band_size=4, nt=8)
        half = blob_problem("state", grid=(16, 16), band_size=4, nt=4)
        per_field = 2 * 4 * 4
        count_full = gradient(full, full.zero_velocity()).storage_counts()
        count_half = gradient(half, half.zero_velocity()).storage_counts()
        # velocity samples hold (4 nt + 1) fields; the cached endpoint fields
        # are nt-independent, so the difference is purely the trajectory
        fields_full = 4 * 8 + 1
        fields_half = 4 * 4 + 1
        assert count_full["complex_coefficients"] - count_half["complex_coefficients"] \
            == (fields_full - fields_half) * per_field
