//! Watershed and SLIC superpixels on a synthetic scene: region counts, size
//! spread and how well the superpixel edges cover the object edges.
//!
//! cargo run --release --example superpixels [-- <out_dir>]

use spmix::consistency::scene;
use spmix::io;
use spmix::superpixel::{boundary_recall, compute_superpixels, label_boundary};
use spmix::{Algorithm, Rng};

fn main() -> spmix::Result<()> {
    let out = std::env::args().nth(1);
    let (img, labels) = scene(&mut Rng::seed(7), 96, 96, 4, 0.0)?;
    let edges = label_boundary(labels.labels(), labels.height(), labels.width());

    println!("algo       n_req  n_out  min_px  max_px  recall@1");
    for algo in [Algorithm::Watershed, Algorithm::Slic] {
        for n in [50, 200, 800] {
            let sp = compute_superpixels(&img, algo, n)?;
            let sizes = sp.region_sizes();
            println!(
                "{:<9} {:>6} {:>6} {:>7} {:>7} {:>9.4}",
                format!("{algo:?}").to_lowercase(),
                n,
                sp.n(),
                sizes.iter().min().unwrap(),
                sizes.iter().max().unwrap(),
                boundary_recall(&edges, &sp, 1)
            );
            if let Some(dir) = &out {
                io::create_dir(dir)?;
                let name = format!("{}_{n}.png", format!("{algo:?}").to_lowercase());
                io::write_superpixels(std::path::Path::new(dir).join(name), &sp)?;
            }
        }
    }
    if let Some(dir) = &out {
        io::write_rgb(std::path::Path::new(dir).join("scene.png"), &img)?;
    }
    Ok(())
}
