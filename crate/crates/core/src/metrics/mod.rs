//! 3D SSIM, MS-SSIM and PSNR with masked-region variants, Bland-Altman
//! agreement, paired comparisons and metric correlation.

mod bland_altman;
mod psnr;
mod report;
mod ssim;
mod window;

pub use bland_altman::{bland_altman, bland_altman_from_rows, BlandAltman, BlandAltmanRow, LOA_Z};
pub use psnr::{mse, psnr, Psnr};
pub use report::{
    evaluate_case, masked_metrics, metric_correlation, paired_diff_report, region_mse, Aggregate, EvalReport, EvalRow,
    Histogram, Metric, MetricAggregate, MetricConfig, PairedDelta, PairedDiff, Region, DELTA_CSV_HEADER,
    EVAL_CSV_HEADER,
};
pub use ssim::{ms_ssim3d, ms_ssim3d_masked, ssim3d, ssim3d_masked, MS_SSIM_WEIGHTS};
pub use window::{MetricWindow, WindowKind};

use crate::data::Volume;
use crate::error::{Error, Result};

pub(crate) fn check_pair(a: &Volume, b: &Volume) -> Result<()> {
    if !a.same_grid(b) {
        return Err(Error::Metric(format!(
            "shape mismatch: {}x{:?} vs {}x{:?}",
            a.channels(),
            a.extents(),
            b.channels(),
            b.extents()
        )));
    }
    Ok(())
}
