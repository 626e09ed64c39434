import pytest

from livercut.config import as_bool, as_floats, as_ints, format_key_values, parse_key_values, read_key_values
from livercut.errors import ConfigError


def test_parse_comments_and_blanks():
    text = "# header\nlambda = 70\n\n  beta=0.2  # trailing\nwindow = 9 9 5\n"
    assert parse_key_values(text) == {"lambda": "70", "beta": "0.2", "window": "9 9 5"}


def test_parse_errors():
    with pytest.raises(ConfigError, match="line 2"):
        parse_key_values("a = 1\nbroken\n")
    with pytest.raises(ConfigError):
        parse_key_values(" = 3\n")
    with pytest.raises(ConfigError):
        read_key_values("/nonexistent/cfg.txt")


def test_format_round_trip(tmp_path):
    items = {"a": 1, "b": 0.1, "c": (1, 2, 3), "d": "x"}
    p = tmp_path / "c.txt"
    p.write_text(format_key_values(items))
    back = read_key_values(p)
    assert back == {"a": "1", "b": "0.1", "c": "1 2 3", "d": "x"}
    assert float(back["b"]) == 0.1


def test_typed_values():
    assert as_floats("1, 2.5 3") == (1.0, 2.5, 3.0)
    assert as_ints("4 5 6", 3) == (4, 5, 6)
    assert as_bool("Yes") and not as_bool("off")
    with pytest.raises(ConfigError):
        as_ints("1.5")
    with pytest.raises(ConfigError):
        as_floats("1 2", 3)
    with pytest.raises(ConfigError):
        as_floats("abc")
    with pytest.raises(ConfigError):
        as_bool("maybe")
