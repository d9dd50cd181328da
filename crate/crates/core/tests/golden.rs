//! Golden-file stability of the L2-TV solver: a frozen fixture solved with
//! frozen parameters must keep exporting byte-identical PGM output.
//!
//! Regenerate (after an intentional solver change) with
//! `cargo test -p varitune-core --test golden -- --ignored write_golden`
//! and commit the refreshed files under `tests/golden/`.

use std::path::PathBuf;

use varitune_core::*;

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

#[derive(serde::Serialize, serde::Deserialize)]
struct GoldenParams {
    lambda: f64,
    height: usize,
    width: usize,
    noise_seed: u64,
    sigma: f64,
    checksum: String,
}

fn fixture() -> (Image64, GoldenParams) {
    let params = GoldenParams {
        lambda: 0.12,
        height: 16,
        width: 16,
        noise_seed: 20240801,
        sigma: 0.1,
        checksum: String::new(),
    };
    let clean = Image::from_fn(params.height, params.width, 1, |i, j, _| {
        0.15 + 0.7 * (i as f64 / 15.0 + j as f64 / 15.0) / 2.0
    });
    let spec = NoiseSpec::new(
        vec![NoiseComponent::Gaussian { sigma: params.sigma }],
        params.noise_seed,
    )
    .unwrap();
    (apply_noise(&clean, &spec), params)
}

fn solve(y: &Image64, lambda: f64) -> Image64 {
    denoise_tv_l2(y, lambda).unwrap()
}

#[test]
#[ignore]
fn write_golden() {
    let (y, mut params) = fixture();
    let u = solve(&y, params.lambda);
    params.checksum = format!("{:?}", u.checksum());
    std::fs::create_dir_all(golden_dir()).unwrap();
    save_image(&u, golden_dir().join("tv_l2_ramp.pgm")).unwrap();
    std::fs::write(
        golden_dir().join("tv_l2_ramp.json"),
        serde_json::to_string_pretty(&params).unwrap(),
    )
    .unwrap();
}

#[test]
fn tv_l2_output_matches_golden() {
    let sidecar: GoldenParams =
        serde_json::from_str(&std::fs::read_to_string(golden_dir().join("tv_l2_ramp.json")).unwrap())
            .unwrap();
    let (y, _) = fixture();
    let u = solve(&y, sidecar.lambda);

    // full-precision checksum pins the f64 output exactly
    assert_eq!(format!("{:?}", u.checksum()), sidecar.checksum);

    // and the 8-bit export must be byte-identical to the stored file
    let tmp = tempfile::tempdir().unwrap();
    let out_path = tmp.path().join("out.pgm");
    save_image(&u, &out_path).unwrap();
    let fresh = std::fs::read(&out_path).unwrap();
    let stored = std::fs::read(golden_dir().join("tv_l2_ramp.pgm")).unwrap();
    assert_eq!(fresh, stored);
}
