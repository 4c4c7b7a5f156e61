use kbnet_core::metrics::{bicubic_baseline, psnr, ssim, MetricReport, SampleMetrics};
use kbnet_core::raw::IspConfig;
use kbnet_core::synth::BurstSample;

use crate::error::{ModelError, Result};
use crate::network::KbNet;
use crate::train::restore;

/// Per-sample PSNR/SSIM of the model for every requested frame count.
pub fn evaluate(
    net: &KbNet,
    samples: &[(String, BurstSample)],
    frame_counts: &[usize],
    label: &str,
    config_hash: &str,
) -> Result<MetricReport> {
    let mut report = MetricReport::new(label, config_hash);
    for &n in frame_counts {
        for (id, s) in samples {
            if n == 0 || n > s.n_frames() {
                return Err(ModelError::Config(format!(
                    "sample {id} has {} frames, cannot use {n}",
                    s.n_frames()
                )));
            }
            let sr = restore(net, s, n)?;
            report.push(SampleMetrics {
                id: id.clone(),
                n_frames: n,
                psnr: psnr(&sr, &s.hr, 1.0)?,
                ssim: ssim(&sr, &s.hr, 1.0)?,
            });
        }
    }
    report.finalize();
    Ok(report)
}

/// The same report for bicubic upsampling of the reference frame.
pub fn evaluate_bicubic(samples: &[(String, BurstSample)], isp: &IspConfig) -> Result<MetricReport> {
    let mut report = MetricReport::new("bicubic", "");
    for (id, s) in samples {
        let up = bicubic_baseline(s, isp)?;
        report.push(SampleMetrics {
            id: id.clone(),
            n_frames: 1,
            psnr: psnr(&up, &s.hr, 1.0)?,
            ssim: ssim(&up, &s.hr, 1.0)?,
        });
    }
    report.finalize();
    Ok(report)
}
