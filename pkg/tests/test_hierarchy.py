import numpy as np
import pytest

from deepspace import model as dsmodel
from deepspace.hierarchy import (
    HierarchyConfig,
    PlaceRecognizer,
    Route,
    load_hierarchy_config,
    predict_place,
    write_hierarchy_config,
)
from deepspace.imageio import ImageRecord, preprocess_for_model
from deepspace.model import deepspace_spec, init_params
from deepspace.tensor import Rng


def _make_model(path, num_classes, names, seed):
    spec = deepspace_spec(num_classes, 32, channels=(4, 4, 4, 6, 6), class_names=names)
    state = init_params(spec, Rng(seed))
    dsmodel.save(state, path)
    return state


@pytest.fixture
def two_level(tmp_path):
    l1 = tmp_path / "level1.dspw"
    l2 = tmp_path / "rooms.dspw"
    _make_model(l1, 4, ("lobby", "east wing", "west wing", "atrium"), seed=1)
    _make_model(l2, 3, ("desk area", "stairs", "entrance"), seed=2)
    return l1, l2


def _random_image(seed, side=50):
    return ImageRecord(Rng(seed).uniform(0, 1, (3, side, side)))


class TestConfigFile:
    def test_round_trip(self, tmp_path, two_level):
        l1, l2 = two_level
        cfg = HierarchyConfig(str(l1), {2: Route(str(l2))})
        path = tmp_path / "h.cfg"
        write_hierarchy_config(cfg, path)
        again = load_hierarchy_config(path)
        assert again.level1 == str(l1)
        assert set(again.routes) == {2}
        assert again.routes[2].model_path == str(l2)

    def test_missing_level1(self, tmp_path):
        path = tmp_path / "h.cfg"
        path.write_text("route.0 = x.dspw\n")
        with pytest.raises(ValueError, match="level1"):
            load_hierarchy_config(path)

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "h.cfg"
        path.write_text("level1 = a.dspw\nbogus = 1\n")
        with pytest.raises(ValueError, match="unknown key"):
            load_hierarchy_config(path)


class TestPrediction:
    def test_empty_routes_is_flat_classification(self, two_level):
        l1, _ = two_level
        rec = PlaceRecognizer(HierarchyConfig(str(l1), {}))
        pred = rec.predict(_random_image(3))
        assert pred.level2 is None
        assert pred.composite_label == pred.level1.class_name

    def test_routed_class_composite_label(self, two_level):
        l1, l2 = two_level
        rec = PlaceRecognizer(HierarchyConfig(str(l1), {i: Route(str(l2)) for i in range(4)}))
        pred = rec.predict(_random_image(4))
        assert pred.level2 is not None
        assert pred.composite_label == f"{pred.level1.class_name}/{pred.level2.class_name}"

    def test_matches_independent_forwards(self, two_level):
        l1_path, l2_path = two_level
        routed = 2
        rec = PlaceRecognizer(HierarchyConfig(str(l1_path), {routed: Route(str(l2_path))}))
        m1 = dsmodel.load(l1_path)
        m2 = dsmodel.load(l2_path)
        agree = 0
        for seed in range(100):
            img = _random_image(1000 + seed)
            pred = rec.predict(img)
            x1 = preprocess_for_model(img, 32).pixels
            p1, _, _ = dsmodel.forward(m1, x1)
            best1 = int(np.argsort(-p1, kind="stable")[0])
            want = m1.spec.class_names[best1]
            if best1 == routed:
                p2, _, _ = dsmodel.forward(m2, x1)
                best2 = int(np.argsort(-p2, kind="stable")[0])
                want = f"{want}/{m2.spec.class_names[best2]}"
                assert pred.level2 is not None
            else:
                assert pred.level2 is None
            assert pred.composite_label == want
            agree += 1
        assert agree == 100

    def test_repeated_calls_identical(self, two_level):
        l1, l2 = two_level
        rec = PlaceRecognizer(HierarchyConfig(str(l1), {0: Route(str(l2))}))
        img = _random_image(5)
        a = rec.predict(img)
        b = rec.predict(img)
        assert a == b

    def test_top5_starts_with_argmax(self, two_level):
        l1, _ = two_level
        rec = PlaceRecognizer(HierarchyConfig(str(l1), {}))
        pred = rec.predict(_random_image(6))
        assert pred.level1.top5[0][0] == pred.level1.class_name
        confs = [c for _, c in pred.level1.top5]
        assert confs == sorted(confs, reverse=True)
        assert all(0.0 <= c <= 1.0 for c in confs)

    def test_invalid_route_index(self, two_level):
        l1, l2 = two_level
        with pytest.raises(ValueError, match="route index"):
            PlaceRecognizer(HierarchyConfig(str(l1), {9: Route(str(l2))}))

    def test_missing_model_file(self, tmp_path, two_level):
        l1, _ = two_level
        with pytest.raises(FileNotFoundError):
            PlaceRecognizer(HierarchyConfig(str(l1), {0: Route(str(tmp_path / "nope.dspw"))}))

    def test_min_confidence_gates_refinement(self, two_level):
        l1, l2 = two_level
        img = _random_image(7)
        open_rec = PlaceRecognizer(HierarchyConfig(str(l1), {i: Route(str(l2)) for i in range(4)}))
        base = open_rec.predict(img)
        gated = PlaceRecognizer(
            HierarchyConfig(str(l1), {i: Route(str(l2)) for i in range(4)},
                            min_confidence=base.level1.confidence + 0.01)
        )
        pred = gated.predict(img)
        assert pred.level2 is None

    def test_custom_label_prefix(self, two_level):
        l1, l2 = two_level
        rec = PlaceRecognizer(
            HierarchyConfig(str(l1), {i: Route(str(l2), label_prefix="B7") for i in range(4)})
        )
        pred = rec.predict(_random_image(8))
        assert pred.composite_label.startswith("B7/")

    def test_predict_place_function(self, two_level):
        l1, _ = two_level
        rec = PlaceRecognizer(HierarchyConfig(str(l1), {}))
        img = _random_image(9)
        assert predict_place(rec, img) == rec.predict(img)
