//! Built-in scenarios, small versions of the validation experiments.

use serde_json::{json, Value};

use crate::config::{Scenario, SCHEMA};

fn doc(name: &str, body: Value) -> Value {
    let mut v = json!({ "schema": SCHEMA, "name": name, "seed": 1 });
    v.as_object_mut().expect("object").extend(body.as_object().expect("object").clone());
    v
}

fn table() -> Vec<(&'static str, &'static str, Value)> {
    vec![
        (
            "bogoliubov-dispersion",
            "standing waves on a uniform condensate, fitted frequencies",
            json!({
                "grid": { "dim": 1, "extent": 25.132741228718345, "points": 256 },
                "condensate": { "kind": "uniform", "density": 1.0 },
                "run": { "dt": 0.002, "steps": 10, "snapshot_every": 10 },
                "dispersion_probe": { "modes": [4, 9, 14, 19, 24], "periods": 10.0, "amplitude": 1e-4 },
            }),
        ),
        (
            "ehrenfest-packet",
            "coherent packet in a harmonic trap against its Ehrenfest ray",
            json!({
                "grid": { "dim": 1, "extent": 32.0, "points": 512 },
                "potential": { "kind": "harmonic", "coeff": [1.0] },
                "perturbation": { "kind": "packet", "center": [0.0], "wavevector": [5.0], "width": 1.0, "amplitude": 1.0 },
                "dispersion": { "variant": "ehrenfest" },
                "run": { "dt": 0.001, "steps": 3142, "snapshot_every": 314, "nonlinear": false },
                "rays": { "launch": [{ "position": [0.0], "wavevector": [5.0] }], "t_end": 3.141592653589793, "dt": 0.001 },
            }),
        ),
        (
            "condensate-crossing",
            "ray launched into a Thomas-Fermi cloud under the unified law",
            json!({
                "grid": { "dim": 1, "extent": 16.0, "points": 256 },
                "potential": { "kind": "harmonic", "coeff": [1.0] },
                "condensate": { "kind": "thomas_fermi", "omega": 9.0 },
                "rays": { "launch": [{ "position": [-3.2], "wavevector": [2.0] }], "t_end": 40.0, "dt": 0.001, "residence_bins": 64 },
            }),
        ),
        (
            "waveaction-transport",
            "packet in a weak trap with Gabor spectra along the run",
            json!({
                "grid": { "dim": 1, "extent": 160.0, "points": 512 },
                "potential": { "kind": "harmonic", "coeff": [0.0025] },
                "perturbation": { "kind": "packet", "center": [0.0], "wavevector": [1.0], "width": 4.47213595499958, "amplitude": 1.0 },
                "dispersion": { "variant": "ehrenfest" },
                "run": { "dt": 0.01, "steps": 3142, "snapshot_every": 314, "nonlinear": false },
                "gabor": { "stride": 16 },
                "rays": { "launch": [{ "position": [0.0], "wavevector": [1.0] }], "t_end": 31.41592653589793, "dt": 0.01 },
            }),
        ),
        (
            "center-residence",
            "slow rays through the trap center of a Thomas-Fermi cloud",
            json!({
                "grid": { "dim": 1, "extent": 16.0, "points": 256 },
                "potential": { "kind": "harmonic", "coeff": [1.0] },
                "condensate": { "kind": "thomas_fermi", "omega": 16.0 },
                "rays": { "launch": [{ "position": [0.0], "wavevector": [0.5] }], "t_end": 20.0, "dt": 0.0005, "residence_bins": 80 },
            }),
        ),
        (
            "kinetic-stationarity",
            "four-wave collision rates of a Rayleigh-Jeans spectrum",
            json!({
                "grid": { "dim": 1, "extent": 1.0, "points": 8 },
                "kinetics": {
                    "preset": { "kind": "rayleigh_jeans", "temperature": 1.0, "chem_potential": -1.0 },
                    "k_lo": 0.5, "k_hi": 2.0, "shells": 16, "dim": 3,
                    "process": { "kind": "four_wave" }, "delta_width": 0.05, "mc_samples": 100000,
                },
            }),
        ),
        (
            "closure",
            "master-equation ensemble against the four-wave kinetic rates",
            json!({
                "grid": { "dim": 2, "extent": 64.0, "points": 128 },
                "kinetics": {
                    "preset": { "kind": "gaussian", "center": 1.5, "width": 0.4, "amplitude": 0.0125 },
                    "k_lo": 0.2, "k_hi": 3.0, "shells": 29, "dim": 2,
                    "process": { "kind": "four_wave" }, "delta_width": 0.05, "mc_samples": 400000,
                    "coupling": 12.566370614359172,
                    "master": { "members": 64, "dt": 0.02, "steps": 2000, "snapshot_every": 50 },
                },
            }),
        ),
        (
            "hamiltonian-structure",
            "nonlinear run with energy bookkeeping and a canonical check",
            json!({
                "grid": { "dim": 1, "extent": 48.0, "points": 128 },
                "potential": { "kind": "harmonic", "coeff": [0.01] },
                "perturbation": { "kind": "random", "k_max": 2.0, "amplitude": 0.3 },
                "run": { "dt": 0.001, "steps": 1000, "snapshot_every": 250 },
                "gabor": { "eps_star": 0.25, "stride": 16, "canonical_check": true },
            }),
        ),
        (
            "weak-condensate",
            "rays in a nearly empty cloud, compared with the bare trap",
            json!({
                "grid": { "dim": 1, "extent": 16.0, "points": 256 },
                "potential": { "kind": "harmonic", "coeff": [1.0] },
                "condensate": { "kind": "thomas_fermi", "omega": 1e-4 },
                "rays": {
                    "launch": [{ "position": [0.0], "wavevector": [1.0] }, { "position": [2.0], "wavevector": [-0.5] }],
                    "t_end": 10.0, "dt": 0.001,
                },
            }),
        ),
    ]
}

/// `(name, description)` of every built-in scenario.
pub fn list() -> Vec<(&'static str, &'static str)> {
    table().into_iter().map(|(n, d, _)| (n, d)).collect()
}

pub fn builtin(name: &str) -> Option<Scenario> {
    table()
        .into_iter()
        .find(|(n, _, _)| *n == name)
        .map(|(n, _, body)| serde_json::from_value(doc(n, body)).expect("built-in scenario parses"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::validate;

    #[test]
    fn builtins_validate() {
        for (name, _) in list() {
            let s = builtin(name).unwrap();
            let r = validate(&s);
            assert!(r.ok(), "{name}: {:?}", r.errors);
            assert_eq!(s.name, name);
        }
        assert!(builtin("missing").is_none());
    }
}
