from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
DEMO = ROOT / "demo"
DATA = Path(__file__).resolve().parent / "data"

LIBRARY_MACHINE = (DEMO / "library.mch").read_text(encoding="utf-8")
OVERRIDE_LEMMA = (DEMO / "lemmas" / "override_tfun.lemma").read_text(encoding="utf-8")


@pytest.fixture
def library_text():
    return LIBRARY_MACHINE


@pytest.fixture
def lemma_dir(tmp_path):
    d = tmp_path / "lemmas"
    d.mkdir()
    (d / "override_tfun.lemma").write_text(OVERRIDE_LEMMA, encoding="utf-8")
    return d


@pytest.fixture
def machine_file(tmp_path):
    p = tmp_path / "library.mch"
    p.write_text(LIBRARY_MACHINE, encoding="utf-8")
    return p
