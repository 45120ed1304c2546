"""Hierarchical routing, multi-label folding, bundle loading."""

import json

import numpy as np
import pytest

from svcdetect import gbdt
from svcdetect.detector import (
    ConfigurationError,
    DetectorBundle,
    MultiLabelOutput,
    ServicePrediction,
    detect,
    load_bundle,
    step_output,
    write_bundle_manifest,
)
from svcdetect.taxonomy import L1_CLASSES, L2_NRT_CLASSES, L2_RT_CLASSES
from svcdetect.traffic import ConversationKey

N_FEAT = 4


def toy_model(class_labels, hot_feature=0):
    """A model that predicts class k when x[hot_feature] is near k."""
    n = 12 * len(class_labels)
    rng = np.random.default_rng(1)
    X = rng.normal(scale=0.1, size=(n, N_FEAT))
    y = []
    for i in range(n):
        k = i % len(class_labels)
        X[i, hot_feature] += float(k)
        y.append(class_labels[k])
    return gbdt.train(X, y, gbdt.TrainParams(n_rounds=20, max_depth=2),
                      class_labels=class_labels)


@pytest.fixture(scope="module")
def bundle():
    return DetectorBundle(
        l1=toy_model(list(L1_CLASSES)),
        l2_rt=toy_model(list(L2_RT_CLASSES), hot_feature=1),
        l2_nrt=toy_model(list(L2_NRT_CLASSES), hot_feature=2),
    )


def vec(l1_val, rt_val=0.0, nrt_val=0.0):
    x = np.zeros(N_FEAT)
    x[0] = l1_val
    x[1] = rt_val
    x[2] = nrt_val
    return x


class TestRouting:
    def test_cg_has_no_subclass(self, bundle):
        pred = detect(bundle, vec(0.0))
        assert pred.l1 == "CG"
        assert pred.sub is None
        assert pred.l2_proba is None

    def test_rt_routes_to_rt_model(self, bundle):
        pred = detect(bundle, vec(1.0, rt_val=1.0))
        assert pred.l1 == "RT"
        assert pred.sub == "VC"
        assert pred.l2_proba is not None

    def test_nrt_routes_to_nrt_model(self, bundle):
        pred = detect(bundle, vec(2.0, nrt_val=1.0))
        assert pred.l1 == "NRT"
        assert pred.sub == "VS"

    def test_detect_equals_standalone_composition(self, bundle):
        rng = np.random.default_rng(4)
        for _ in range(100):
            x = np.array([rng.uniform(-0.5, 2.5), rng.uniform(-0.5, 2.5),
                          rng.uniform(-0.5, 1.5), rng.normal()])
            pred = detect(bundle, x)
            l1 = gbdt.predict(bundle.l1, x)
            assert pred.l1 == l1
            if l1 == "CG":
                assert pred.sub is None
            elif l1 == "RT":
                assert pred.sub == gbdt.predict(bundle.l2_rt, x)
            else:
                assert pred.sub == gbdt.predict(bundle.l2_nrt, x)

    def test_deterministic(self, bundle):
        x = vec(1.0, rt_val=2.0)
        first = detect(bundle, x)
        second = detect(bundle, x)
        assert first.l1 == second.l1 and first.sub == second.sub
        assert np.array_equal(first.l1_proba, second.l1_proba)

    def test_illegal_pair_rejected(self):
        with pytest.raises(ValueError, match="illegal class pair"):
            ServicePrediction(l1="NRT", sub="MG",
                              l1_proba=np.ones(3) / 3, l2_proba=None)


class TestStepOutput:
    def key(self, n):
        return ConversationKey("192.168.50.10", f"203.0.113.{n}")

    def pred(self, l1, sub=None):
        return ServicePrediction(l1=l1, sub=sub, l1_proba=np.ones(3) / 3,
                                 l2_proba=None)

    def test_empty_map(self):
        assert step_output({}) == MultiLabelOutput(False, False, False)

    def test_field_order_is_cg_rt_nrt(self):
        out = step_output({self.key(1): self.pred("CG")})
        assert out._fields == ("cg", "rt", "nrt")
        assert out == (True, False, False)

    def test_or_semantics(self):
        cmap = {self.key(1): self.pred("RT", "VC"),
                self.key(2): self.pred("NRT", "FD")}
        assert step_output(cmap) == MultiLabelOutput(False, True, True)

    def test_all_same_class(self):
        cmap = {self.key(n): self.pred("CG") for n in range(3)}
        assert step_output(cmap) == MultiLabelOutput(True, False, False)


class TestBundle:
    def test_wrong_class_order_rejected(self):
        with pytest.raises(ConfigurationError, match="class order"):
            DetectorBundle(
                l1=toy_model(["RT", "CG", "NRT"]),
                l2_rt=toy_model(list(L2_RT_CLASSES)),
                l2_nrt=toy_model(list(L2_NRT_CLASSES)),
            )

    def test_feature_count_mismatch_rejected(self):
        small = gbdt.train(np.array([[0.0], [1.0], [2.0]]),
                           ["CG", "RT", "NRT"],
                           gbdt.TrainParams(n_rounds=1),
                           class_labels=list(L1_CLASSES))
        with pytest.raises(ConfigurationError, match="feature count"):
            DetectorBundle(l1=small,
                           l2_rt=toy_model(list(L2_RT_CLASSES)),
                           l2_nrt=toy_model(list(L2_NRT_CLASSES)))

    def test_manifest_round_trip(self, bundle, tmp_path):
        for name, model in (("l1", bundle.l1), ("l2_rt", bundle.l2_rt),
                            ("l2_nrt", bundle.l2_nrt)):
            gbdt.save_model(model, tmp_path / f"{name}.json")
        manifest = tmp_path / "bundle.json"
        write_bundle_manifest(manifest, {"l1": "l1.json",
                                         "l2_rt": "l2_rt.json",
                                         "l2_nrt": "l2_nrt.json"})
        loaded = load_bundle(manifest)
        x = vec(1.0, rt_val=1.0)
        assert detect(loaded, x).l1 == detect(bundle, x).l1
        assert detect(loaded, x).sub == detect(bundle, x).sub

    def test_manifest_class_order_mismatch(self, bundle, tmp_path):
        gbdt.save_model(bundle.l1, tmp_path / "l1.json")
        gbdt.save_model(bundle.l2_rt, tmp_path / "l2_rt.json")
        gbdt.save_model(bundle.l2_nrt, tmp_path / "l2_nrt.json")
        manifest = tmp_path / "bundle.json"
        write_bundle_manifest(manifest, {"l1": "l1.json",
                                         "l2_rt": "l2_rt.json",
                                         "l2_nrt": "l2_nrt.json"})
        doc = json.loads(manifest.read_text())
        doc["l2_rt"]["classes"] = ["VC", "MG", "AC"]
        manifest.write_text(json.dumps(doc))
        with pytest.raises(ConfigurationError, match="classes"):
            load_bundle(manifest)

    def test_manifest_missing_entry(self, tmp_path):
        manifest = tmp_path / "bundle.json"
        manifest.write_text('{"l1": {"path": "l1.json", "classes": []}}')
        with pytest.raises(ConfigurationError):
            load_bundle(manifest)

    def test_manifest_missing_model_file(self, tmp_path):
        manifest = tmp_path / "bundle.json"
        write_bundle_manifest(manifest, {"l1": "l1.json",
                                         "l2_rt": "l2_rt.json",
                                         "l2_nrt": "l2_nrt.json"})
        with pytest.raises(ConfigurationError, match="cannot load"):
            load_bundle(manifest)
