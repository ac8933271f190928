//! Named test problems with the blur and regularization settings of the
//! experiments.

use acquire_core::io::load_pgm;
use acquire_core::testbed::{
    make_problem, shepp_logan_variant, BlurSpec, PhantomVariant, StartGuess, TestProblem,
};
use anyhow::{anyhow, bail, Context};

use crate::config::ProblemSpec;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Source {
    Phantom(PhantomVariant),
    /// Supplied by the user as a PGM file.
    External,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub source: Source,
    pub blur: BlurSpec,
    /// `(snr, lambda)` pairs for the smoothed-TV problem.
    pub lambdas: [(f64, f64); 2],
}

const fn gauss(sigma: f64) -> BlurSpec {
    BlurSpec::Gaussian { sigma }
}

const MOTION: BlurSpec = BlurSpec::Motion {
    len: 11,
    angle_deg: 45.0,
};
const DISK: BlurSpec = BlurSpec::Disk { radius: 4.0 };

const PRESETS: [Preset; 10] = [
    Preset {
        name: "phantom",
        source: Source::Phantom(PhantomVariant::Original),
        blur: gauss(2.0),
        lambdas: [(35.0, 6e-3), (40.0, 4e-3)],
    },
    Preset {
        name: "phantom-modified",
        source: Source::Phantom(PhantomVariant::Modified),
        blur: gauss(2.0),
        lambdas: [(35.0, 6e-3), (40.0, 4e-3)],
    },
    Preset {
        name: "cameraman",
        source: Source::External,
        blur: gauss(1.4),
        lambdas: [(35.0, 1.55e-2), (40.0, 5e-3)],
    },
    Preset {
        name: "micro",
        source: Source::External,
        blur: gauss(2.0),
        lambdas: [(35.0, 4.5e-3), (40.0, 1e-3)],
    },
    Preset {
        name: "satellite",
        source: Source::External,
        blur: gauss(2.0),
        lambdas: [(35.0, 9e-4), (40.0, 9e-5)],
    },
    Preset {
        name: "cameraman-motion",
        source: Source::External,
        blur: MOTION,
        lambdas: [(35.0, 7.5e-3), (40.0, 1.75e-3)],
    },
    Preset {
        name: "satellite-motion",
        source: Source::External,
        blur: MOTION,
        lambdas: [(35.0, 1.5e-3), (40.0, 2.25e-4)],
    },
    Preset {
        name: "cameraman-oof",
        source: Source::External,
        blur: DISK,
        lambdas: [(35.0, 1e-2), (40.0, 1.2e-3)],
    },
    Preset {
        name: "satellite-oof",
        source: Source::External,
        blur: DISK,
        lambdas: [(35.0, 5e-4), (40.0, 1.9e-4)],
    },
    Preset {
        name: "custom",
        source: Source::External,
        blur: gauss(2.0),
        lambdas: [(f64::NAN, f64::NAN); 2],
    },
];

impl Preset {
    pub fn lookup(name: &str) -> Option<Preset> {
        PRESETS.iter().copied().find(|p| p.name == name)
    }

    pub fn names() -> Vec<&'static str> {
        PRESETS.iter().map(|p| p.name).collect()
    }

    pub fn lambda_for(&self, snr: f64) -> Option<f64> {
        self.lambdas.iter().find(|(s, _)| *s == snr).map(|&(_, l)| l)
    }
}

/// Builds (or loads) the problem described by `spec`.
pub fn build_problem(spec: &ProblemSpec) -> anyhow::Result<TestProblem> {
    if let Some(dir) = &spec.bundle {
        return TestProblem::load(dir).with_context(|| format!("loading bundle {}", dir.display()));
    }
    let preset = Preset::lookup(&spec.name).ok_or_else(|| anyhow!("problem.name: unknown problem {:?}", spec.name))?;
    let reference = match preset.source {
        Source::Phantom(variant) => shepp_logan_variant(spec.size, variant).context("problem.size")?,
        Source::External => {
            let Some(path) = &spec.image else {
                bail!("problem.image: {} needs a reference PGM (--image PATH)", preset.name);
            };
            load_pgm(path).with_context(|| format!("problem.image: reading {}", path.display()))?
        }
    };
    let blur = spec.blur.unwrap_or(preset.blur);
    let psf = blur.psf(reference.rows(), reference.cols())?;
    let mut problem = make_problem(&reference, &psf, spec.snr, spec.seed, spec.noise)?;
    problem.meta.blur = Some(blur);
    problem.meta.lambda_hint = preset.lambda_for(spec.snr);
    Ok(problem)
}

/// Starting-guess rule: explicit, else the one used with this blur kind.
pub fn start_rule(problem: &TestProblem, explicit: Option<StartGuess>) -> StartGuess {
    explicit.unwrap_or_else(|| problem.meta.blur.map_or(StartGuess::Observed, |b| b.default_start()))
}
