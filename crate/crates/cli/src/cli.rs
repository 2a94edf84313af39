use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use divreg::io_image::PhantomKind;
use divreg::metrics::Similarity;

#[derive(Debug, Parser)]
#[command(name = "divreg", version, about = "Incompressible diffeomorphic registration with divergence-conforming B-splines")]
pub struct Cli {
    /// Print a machine-readable JSON summary on stdout.
    #[arg(long, global = true)]
    pub json: bool,

    /// Worker threads (results do not depend on it).
    #[arg(long, global = true, env = "DIVREG_THREADS")]
    pub threads: Option<usize>,

    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register a moving image onto a fixed image.
    Register(RegisterArgs),
    /// Exponentiate a velocity field into a deformation and Jacobian maps.
    Exp(ExpArgs),
    /// Project a field onto the divergence-free set of a mask.
    Project(ProjectArgs),
    /// Report the divergence of a field on a mask.
    Divcheck(DivcheckArgs),
    /// Write synthetic phantoms and a ground-truth field.
    Synth(SynthArgs),
    /// Warp an image or a list of points with a velocity field.
    Warp(WarpArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    /// Divergence-conforming B-splines (quadratic divergence).
    Conforming,
    /// Cubic B-splines per component; unconstrained only.
    Classical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Interp {
    Trilinear,
    Cubic,
}

impl From<Interp> for divreg::interp::Interpolation {
    fn from(i: Interp) -> Self {
        match i {
            Interp::Trilinear => divreg::interp::Interpolation::Trilinear,
            Interp::Cubic => divreg::interp::Interpolation::Cubic,
        }
    }
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// Fixed (reference) image.
    #[arg(long)]
    pub fixed: PathBuf,
    /// Moving image, warped by exp(v) onto the fixed one.
    #[arg(long)]
    pub moving: PathBuf,
    /// Incompressible region (nonzero voxels), same lattice as the images.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Register without divergence constraints.
    #[arg(long)]
    pub unconstrained: bool,
    #[arg(long, value_enum, default_value = "conforming")]
    pub family: Family,
    #[arg(long, default_value = "nmi")]
    pub similarity: Similarity,
    #[arg(long, default_value_t = 0.95)]
    pub sim_weight: f64,
    #[arg(long, default_value_t = 0.05)]
    pub bend_weight: f64,
    /// Finest knot spacing in mm.
    #[arg(long, default_value_t = 5.0)]
    pub grid_spacing: f64,
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    /// Euler steps of the exponential (power of two).
    #[arg(long, default_value_t = 8)]
    pub steps: usize,
    /// Iteration cap per pyramid level.
    #[arg(long, default_value_t = 100)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = 64)]
    pub nmi_bins: usize,
    /// Gaussian window sigma of LNCC, in voxels.
    #[arg(long, default_value_t = 5.0)]
    pub lncc_sigma: f64,
    #[arg(long, value_enum, default_value = "cubic")]
    pub interpolation: Interp,
    /// Output field container.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON report; defaults to the output path with `.report.json` appended.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExpArgs {
    /// Field container.
    pub svf: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub steps: usize,
    /// Image whose lattice the outputs use; defaults to a lattice over the
    /// control grid domain with roughly 1 mm voxels.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Displacement volume (vector NIfTI).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Jacobian determinant volume.
    #[arg(long)]
    pub jacobian: Option<PathBuf>,
    /// Write log(det J) instead of det J.
    #[arg(long)]
    pub log_jacobian: bool,
    /// Restrict the reported statistics to this mask.
    #[arg(long)]
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    pub svf: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DivcheckArgs {
    pub svf: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Phantom description as JSON; overrides --kind and --size.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value = "sphere-shells")]
    pub kind: PhantomKind,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write a ground-truth field and the moving image warped by its
    /// inverse.
    #[arg(long)]
    pub ground_truth: bool,
    /// Ground-truth knot spacing in mm.
    #[arg(long, default_value_t = 16.0)]
    pub gt_spacing: f64,
    /// Peak ground-truth speed in mm.
    #[arg(long, default_value_t = 3.0)]
    pub amplitude: f64,
    /// Radius of the spherical mask as a fraction of the image size; 0 skips it.
    #[arg(long, default_value_t = 0.0)]
    pub mask_radius: f64,
    /// Prefix of every output file.
    #[arg(long)]
    pub out_prefix: PathBuf,
}

#[derive(Debug, Args)]
pub struct WarpArgs {
    pub svf: PathBuf,
    /// Image to resample as `I o exp(v)`.
    #[arg(long, conflicts_with = "points", required_unless_present = "points")]
    pub image: Option<PathBuf>,
    /// Points file, one `x,y,z` triple (mm) per line, transported by exp(v).
    #[arg(long)]
    pub points: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub steps: usize,
    #[arg(long, value_enum, default_value = "cubic")]
    pub interpolation: Interp,
    /// Use exp(-v) instead.
    #[arg(long)]
    pub inverse: bool,
    #[arg(long)]
    pub out: PathBuf,
}
