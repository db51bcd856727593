#![allow(dead_code)]

use std::path::{Path, PathBuf};

use authindex::image::{save_image, ImageBuffer};
use authindex::index::Label;
use authindex::inverters::{Inverter, ReferenceInverter, ReferenceInverterConfig};
use authindex::metrics::{Providers, SsimConfig};
use authindex::synth::natural_image;

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Small-image providers: 7-pixel SSIM window.
pub fn small_providers() -> Providers {
    Providers::reference().with_ssim(SsimConfig::with_window(7))
}

pub fn reference(fidelity: f64, seed: u64) -> ReferenceInverter {
    ReferenceInverter::new(ReferenceInverterConfig { blur_sigma: 1.5, noise_sigma: 0.01, noise_seed: seed, fidelity }).unwrap()
}

/// One manifest line to be written.
pub struct PairSpec {
    pub id: String,
    pub label: Label,
    pub generator: String,
    pub original: ImageBuffer,
    /// `None` leaves the inversion to the live inverter.
    pub inverted: Option<ImageBuffer>,
}

impl PairSpec {
    pub fn new(id: impl Into<String>, label: Label, original: ImageBuffer, inverted: Option<ImageBuffer>) -> Self {
        PairSpec { id: id.into(), label, generator: "synthetic".into(), original, inverted }
    }
}

/// Writes the images as PNG files and a manifest next to them.
pub fn write_corpus(dir: &Path, name: &str, specs: &[PairSpec]) -> PathBuf {
    std::fs::create_dir_all(dir.join("img")).unwrap();
    let mut lines = String::new();
    for s in specs {
        let orig = format!("img/{}.png", s.id);
        save_image(&s.original, &dir.join(&orig)).unwrap();
        let mut obj = serde_json::json!({
            "id": s.id,
            "original": orig,
            "label": s.label,
            "generator": s.generator,
        });
        if let Some(inv) = &s.inverted {
            let p = format!("img/{}_inv.png", s.id);
            save_image(inv, &dir.join(&p)).unwrap();
            obj["inverted"] = p.into();
        }
        lines.push_str(&obj.to_string());
        lines.push('\n');
    }
    let path = dir.join(name);
    std::fs::write(&path, lines).unwrap();
    path
}

/// Class-separable corpus: fakes inverted at fidelity 0.95, reals at 0.3.
pub fn separable_specs(prefix: &str, n_real: usize, n_fake: usize, size: usize, seed: u64) -> Vec<PairSpec> {
    let close = reference(0.95, seed);
    let far = reference(0.3, seed);
    let mut out = Vec::new();
    for i in 0..n_real + n_fake {
        let x = natural_image(size, size, 3, seed * 100_003 + i as u64);
        let (label, inv) = if i < n_real { (Label::Real, &far) } else { (Label::Fake, &close) };
        let y = inv.invert(&x).unwrap();
        out.push(PairSpec::new(format!("{prefix}{i:04}"), label, x, Some(y)));
    }
    out
}
