import math

import pytest
import torch

from conftest import write_config
from thermasplat.thermasplat import ConfigReader, Logger, NumericalFailure, Utility, ValidationError


class TestConfigReader:
    def test_bundled_default(self):
        assert ConfigReader.get_setting("thermasplat.LoggingLevel") == ["INFORMATIONAL", "WARNING"]

    def test_missing_setting_uses_default(self):
        assert ConfigReader.get_setting("no_such_setting", 42) == 42

    def test_other_file(self, tmp_path):
        ConfigReader.use_file(write_config(tmp_path, seed=5))
        assert ConfigReader.get_setting("seed") == 5

    def test_missing_file_falls_back(self, tmp_path, capsys):
        ConfigReader.use_file(str(tmp_path / "absent.json"))
        assert ConfigReader.get_setting("seed", 1) == 1
        assert "not found" in capsys.readouterr().out

    def test_non_object_file_is_not_cached(self, tmp_path):
        path = tmp_path / "list.json"
        path.write_text("[1, 2]", encoding="utf-8")
        ConfigReader.use_file(str(path))
        with pytest.raises(ValidationError, match="flat JSON object"):
            ConfigReader.load()
        assert ConfigReader.settings is None
        assert ConfigReader.get_setting("seed", 3) == 3


class TestLogger:
    def test_levels_from_config(self, tmp_path, capsys):
        ConfigReader.use_file(write_config(tmp_path))
        Logger.reload_config()
        logger = Logger()
        logger.log("quiet", "INFORMATIONAL")
        logger.log("loud", "WARNING")
        logger.log("always", "ERROR")
        out = capsys.readouterr().out
        assert "quiet" not in out
        assert "loud" in out
        assert "always" in out
        assert "[thermasplat]" in out

    def test_schedule_table_needs_debug(self, capsys):
        rows = [(0, 0.0, (0.1, 0.8, 0.1), 1e-3)]
        Logger().print_schedule_table("four_stage", rows)
        assert capsys.readouterr().out == ""
        Logger().print_schedule_table("four_stage", rows, force=True)
        out = capsys.readouterr().out
        assert "Schedule: four_stage" in out
        assert "1.000e-03" in out


class TestUtility:
    def test_dimension_check_names_images(self):
        with pytest.raises(ValidationError, match="thermal"):
            Utility.check_image_dimensions([torch.zeros(4, 4, 3), torch.zeros(4, 5)], ["rgb", "thermal"])
        Utility.check_image_dimensions([torch.zeros(4, 4, 3), torch.zeros(4, 4)], ["rgb", "thermal"])

    def test_check_finite_names_row(self):
        tensor = torch.zeros(5, 3, dtype=torch.float64)
        tensor[3, 1] = math.inf
        with pytest.raises(NumericalFailure, match="Non-finite color at index 3"):
            Utility.check_finite(tensor, "color")

    def test_luminance(self):
        image = torch.tensor([[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]], dtype=torch.float64)
        expected = torch.tensor([[0.299, 0.587, 0.114]], dtype=torch.float64)
        torch.testing.assert_close(Utility.luminance(image), expected, rtol=0.0, atol=1e-12)

    def test_loss_and_grad(self):
        x = torch.tensor([1.0, 2.0], dtype=torch.float64)
        loss, (grad,) = Utility.loss_and_grad(lambda v: (v**2).sum(), x)
        assert float(loss) == 5.0
        assert grad.tolist() == [2.0, 4.0]
        assert not x.requires_grad

    def test_config_hash_ignores_key_order(self):
        assert Utility.config_hash({"a": 1, "b": [2, 3]}) == Utility.config_hash({"b": [2, 3], "a": 1})
        assert Utility.config_hash({"a": 1}) != Utility.config_hash({"a": 2})

    @pytest.mark.parametrize(
        "entry, expected",
        [
            (["INT", 3, 1, 10, 1, False], {"type": int, "default": None, "metavar": "INT[1..10]"}),
            (["FLOATS", [0.1, 0.2, 0.3]], {"type": float, "nargs": 3, "default": None, "metavar": "FLOAT"}),
            (["STRING", "a", ["a", "b"]], {"type": str, "default": None, "choices": ["a", "b"]}),
            (["STRING", ""], {"type": str, "default": None, "choices": None}),
            (["BOOLEAN", False], {"action": "store_const", "const": True, "default": None}),
        ],
    )
    def test_create_setting_entry(self, entry, expected):
        assert Utility.create_setting_entry(entry[0], entry) == expected

    def test_unsupported_setting_type(self):
        with pytest.raises(ValidationError):
            Utility.create_setting_entry("COMPLEX", ["COMPLEX", 1j])

    def test_check_setting_value(self):
        assert Utility.check_setting_value("iters", ["INT", 5, 1, 10, 1, False], "7") == 7
        assert Utility.check_setting_value("lambda", ["FLOATS", [0.0, 0.0]], [1, 2]) == (1.0, 2.0)
        assert Utility.check_setting_value("flag", ["BOOLEAN", False], 1) is True
        with pytest.raises(ValidationError, match="outside"):
            Utility.check_setting_value("iters", ["INT", 5, 1, 10, 1, False], 11)
        with pytest.raises(ValidationError, match="must be INT"):
            Utility.check_setting_value("iters", ["INT", 5, 1, 10, 1, False], "many")
