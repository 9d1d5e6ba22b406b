"""Import the compiled extension and exercise it end to end.

Build first:
    cargo build --release -p dofa-python --features extension-module
then run this script from the repository root. Set DOFA_LIB to point at the
shared library if it is somewhere other than target/release.
"""

import importlib.util
import os
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parents[3]


def load_module(tmp):
    lib = pathlib.Path(os.environ.get("DOFA_LIB", ROOT / "target" / "release" / "libdofa.so"))
    if not lib.exists():
        sys.exit(f"{lib} not found; build with --features extension-module")
    target = pathlib.Path(tmp) / "dofa.so"
    shutil.copy(lib, target)
    spec = importlib.util.spec_from_file_location("dofa", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    with tempfile.TemporaryDirectory() as tmp:
        dofa = load_module(tmp)
        model = dofa.Model("desk", 0)
        print(model)

        wavelengths = [0.49, 0.56, 0.665, 0.842]
        kernel, shape, bias = model.dynamic_kernel(wavelengths)
        assert shape == [64, 4, 16, 16], shape
        print("kernel", shape, "bias", len(bias))

        manifest = dofa.synth(pathlib.Path(tmp) / "data", per_modality=6, classes=3, seed=0)
        path, modality, _ = open(manifest).readline().rstrip("\n").split("\t")
        data, dims, wl, label = dofa.load_raster(manifest.parent / path, modality)
        features = model.features(data, dims, wl)
        print(modality, dims, "label", label, "features", len(features))

        history = dofa.pretrain(manifest, pathlib.Path(tmp) / "run", preset="smoke", epochs=2)
        for h in history:
            print("epoch {epoch}: recon {recon:.4f} distill {distill:.4f}".format(**h))
        trained = dofa.Model.load(pathlib.Path(tmp) / "run" / "last.dofc")
        print("probe top-1", dofa.probe(trained, manifest, manifest, epochs=5))

        try:
            model.features(data, dims, wl[:-1])
        except dofa.DofaError as e:
            print("rejected:", e)
        else:
            raise AssertionError("wavelength mismatch accepted")
    print("smoke test passed")


if __name__ == "__main__":
    main()
