//! Superpixel mixing of two scenes. The same mask mixes the images and their
//! label maps, so mixed labels still line up with mixed pixels.
//!
//! cargo run --release --example mixing [-- <out_dir>]

use spmix::consistency::scene;
use spmix::io;
use spmix::mixer::{make_mix, mix_probmaps};
use spmix::{Algorithm, MixConfig, ProbMap, Rng};

fn main() -> spmix::Result<()> {
    let out = std::env::args().nth(1);
    let mut rng = Rng::seed(3);
    let (x1, y1) = scene(&mut rng, 64, 64, 3, 4.0)?;
    let (x2, y2) = scene(&mut rng, 64, 64, 3, 4.0)?;

    for algo in [Algorithm::Watershed, Algorithm::Slic] {
        for proportion in [0.0, 0.2, 0.5, 0.8] {
            let cfg = MixConfig { n_superpixels: 100, proportion, algo, ..MixConfig::default() };
            let (mixed, mask) = make_mix(&x1, &x2, &cfg, &mut Rng::seed(11))?;
            let labels = mix_probmaps(&ProbMap::one_hot(&y1, 3)?, &ProbMap::one_hot(&y2, 3)?, &mask)?.argmax();

            // every donor pixel carries the donor's label, every other pixel the base's
            let aligned = (0..mask.bits().len()).all(|i| {
                let want = if mask.bits()[i] == 1 { y2.labels()[i] } else { y1.labels()[i] };
                labels.labels()[i] == want
            });
            println!(
                "{:<9} p={proportion:.1}  donor pixels {:>4}  area {:.3}  labels aligned: {aligned}",
                format!("{algo:?}").to_lowercase(),
                mask.count_ones(),
                mask.area_fraction()
            );
            if let Some(dir) = &out {
                io::create_dir(dir)?;
                let tag = format!("{}_{:02}", format!("{algo:?}").to_lowercase(), (proportion * 10.0) as u32);
                let dir = std::path::Path::new(dir);
                io::write_rgb(dir.join(format!("mixed_{tag}.png")), &mixed)?;
                io::write_mask(dir.join(format!("mask_{tag}.png")), &mask)?;
            }
        }
    }
    Ok(())
}
