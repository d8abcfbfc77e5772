"""Manifest loading: schema enforcement, path resolution, invariants."""

import pytest

from itigen_bridge import ManifestError, load_manifest
from itigen_bridge.manifest import DEFAULT_AUGMENTATION, DEFAULT_FIXTURES

from conftest import write_manifest


def full_body(image_tree):
    return {
        "source": "models/tiny-clip",
        "tokenizer_fingerprint": "0011223344556677",
        "seed": 9,
        "augmentation": {"crops": 2, "flips": 1},
        "images": {
            "style": {
                "first": str(image_tree / "style" / "first"),
                "second": str(image_tree / "style" / "second"),
            }
        },
        "anchors": {
            "style": {"first": ["a first thing"], "second": ["a second thing"]}
        },
        "outputs": {
            "encoder": "out/encoder.itb",
            "fixtures": "out/fixtures.itb",
            "images": {"style": "out/refs_style.itb"},
            "anchors": "out/anchors.itb",
        },
        "fixtures": {"count": 30, "max_length": 10},
    }


class TestLoading:
    def test_full_document_resolves(self, tmp_path, image_tree):
        manifest = load_manifest(
            write_manifest(tmp_path / "m.json", full_body(image_tree))
        )
        assert manifest.source == "models/tiny-clip"
        assert manifest.tokenizer_fingerprint == "0011223344556677"
        assert manifest.seed == 9
        assert manifest.augmentation == {"crops": 2, "flips": 1}
        assert manifest.encoder_out == tmp_path / "out" / "encoder.itb"
        assert manifest.fixtures_out == tmp_path / "out" / "fixtures.itb"
        assert manifest.image_outs == {"style": tmp_path / "out" / "refs_style.itb"}
        assert manifest.anchors_out == tmp_path / "out" / "anchors.itb"
        assert manifest.generated_out is None
        assert manifest.fixtures == {"count": 30, "max_length": 10}
        assert list(manifest.image_dirs["style"]) == ["first", "second"]
        assert manifest.image_dirs["style"]["first"].is_dir()
        assert manifest.anchor_texts["style"]["second"] == ["a second thing"]
        assert manifest.base_dir == tmp_path

    def test_minimal_document_gets_defaults(self, tmp_path):
        manifest = load_manifest(
            write_manifest(
                tmp_path / "m.json",
                {"source": "x", "outputs": {"encoder": "e.itb"}},
            )
        )
        assert manifest.seed == 0
        assert manifest.tokenizer_fingerprint == ""
        assert manifest.augmentation == DEFAULT_AUGMENTATION
        assert manifest.fixtures == DEFAULT_FIXTURES
        assert manifest.image_dirs == {}
        assert manifest.anchor_texts == {}
        assert manifest.fixtures_out is None

    def test_absolute_paths_kept(self, tmp_path):
        manifest = load_manifest(
            write_manifest(
                tmp_path / "m.json",
                {"source": "x", "outputs": {"encoder": "/elsewhere/e.itb"}},
            )
        )
        assert str(manifest.encoder_out) == "/elsewhere/e.itb"

    def test_source_path_prefers_existing_directory(self, tmp_path):
        (tmp_path / "local-model").mkdir()
        manifest = load_manifest(
            write_manifest(
                tmp_path / "m.json",
                {"source": "local-model", "outputs": {}},
            )
        )
        assert manifest.source_path() == tmp_path / "local-model"

    def test_source_path_falls_back_to_identifier(self, tmp_path):
        manifest = load_manifest(
            write_manifest(
                tmp_path / "m.json",
                {"source": "org/hosted-model", "outputs": {}},
            )
        )
        assert manifest.source_path() == "org/hosted-model"


class TestValidation:
    def test_missing_file_raises_oserror(self, tmp_path):
        with pytest.raises(OSError):
            load_manifest(tmp_path / "absent.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text("{not json")
        with pytest.raises(ManifestError, match="not valid JSON"):
            load_manifest(path)

    @pytest.mark.parametrize(
        "mutate, complaint",
        [
            (lambda b: b.pop("source"), "source"),
            (lambda b: b.pop("outputs"), "outputs"),
            (lambda b: b.update(source=""), "source"),
            (lambda b: b.update(seed=-1), "seed"),
            (lambda b: b.update(unknown_key=1), "unknown_key"),
            (lambda b: b["augmentation"].update(crops=-2), "crops"),
            (lambda b: b["fixtures"].update(count=0), "count"),
            (lambda b: b["fixtures"].update(max_length=2), "max_length"),
            (lambda b: b["anchors"]["style"].update(first=[]), "first"),
            (lambda b: b["images"].update(empty={}), "empty"),
        ],
    )
    def test_schema_violations(self, tmp_path, image_tree, mutate, complaint):
        body = full_body(image_tree)
        mutate(body)
        with pytest.raises(ManifestError, match=complaint):
            load_manifest(write_manifest(tmp_path / "m.json", body))

    def test_missing_image_directory(self, tmp_path, image_tree):
        body = full_body(image_tree)
        body["images"]["style"]["first"] = str(image_tree / "style" / "nowhere")
        with pytest.raises(ManifestError, match="not a directory"):
            load_manifest(write_manifest(tmp_path / "m.json", body))

    def test_empty_image_directory(self, tmp_path, image_tree):
        (tmp_path / "bare").mkdir()
        body = full_body(image_tree)
        body["images"]["style"]["first"] = str(tmp_path / "bare")
        with pytest.raises(ManifestError, match="empty"):
            load_manifest(write_manifest(tmp_path / "m.json", body))

    def test_image_anchor_category_order_must_agree(self, tmp_path, image_tree):
        body = full_body(image_tree)
        body["anchors"]["style"] = {
            "second": ["a second thing"],
            "first": ["a first thing"],
        }
        with pytest.raises(ManifestError, match="categories"):
            load_manifest(write_manifest(tmp_path / "m.json", body))

    def test_image_attribute_requires_output_path(self, tmp_path, image_tree):
        body = full_body(image_tree)
        del body["outputs"]["images"]
        with pytest.raises(ManifestError, match="output path"):
            load_manifest(write_manifest(tmp_path / "m.json", body))
