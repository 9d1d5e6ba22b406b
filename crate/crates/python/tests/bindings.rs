use pyo3::ffi::c_str;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module<R>(f: impl FnOnce(Python<'_>, &Bound<'_, PyDict>) -> R) -> R {
    Python::attach(|py| {
        let m = PyModule::new(py, "dofa").unwrap();
        dofa::dofa(&m).unwrap();
        let globals = PyDict::new(py);
        globals.set_item("dofa", m).unwrap();
        f(py, &globals)
    })
}

#[test]
fn model_from_python() {
    with_module(|py, g| {
        py.run(
            c_str!(
                r#"
m = dofa.Model("desk", 0)
assert m.num_parameters > 0 and m.embed_dim == 64
k, shape, b = m.dynamic_kernel([0.49, 0.56, 0.665])
assert shape == [64, 3, 16, 16] and len(k) == 64 * 3 * 256 and len(b) == 64
img = [0.01 * (i % 17) for i in range(3 * 32 * 32)]
f = m.features(img, (3, 32, 32), [0.49, 0.56, 0.665])
assert len(f) == 64
assert len(m.encode(img, (3, 32, 32), [0.49, 0.56, 0.665])) == 5 * 64
try:
    m.features(img, (3, 32, 32), [0.49, 0.56])
    raise AssertionError("mismatch accepted")
except dofa.DofaError:
    pass
"#
            ),
            Some(g),
            None,
        )
        .unwrap();
    });
}

#[test]
fn dataset_round_trip_from_python() {
    let tmp = tempfile::tempdir().unwrap();
    with_module(|py, g| {
        g.set_item("out", tmp.path().join("data")).unwrap();
        g.set_item("ckpt", tmp.path().join("m.dofc")).unwrap();
        py.run(
            c_str!(
                r#"
manifest = dofa.synth(out, per_modality=4, classes=2, size=32, seed=1)
lines = open(manifest).read().splitlines()
assert len(lines) == 20
path, modality, label = lines[5].split("\t")
data, shape, wl, lab = dofa.load_raster(out / path, modality)
assert shape[0] == len(wl) and lab == int(label)
m = dofa.Model("desk", 2)
m.save(ckpt)
m2 = dofa.Model.load(ckpt)
assert m2.features(data, shape, wl) == m.features(data, shape, wl)
acc = dofa.probe(m, manifest, manifest, epochs=2)
assert 0.0 <= acc <= 1.0
"#
            ),
            Some(g),
            None,
        )
        .unwrap();
    });
}
