//! Single-image inference round trip: degrade a synthetic scene, write it as
//! PPM, restore it through the CLI path (reflect-padding included), and
//! compare PSNR before and after.
//!
//! Run with: cargo run --release --example restore_image

use m2restore::cli::{cmd_infer, cmd_train, cmd_gen};
use m2restore::config::RunConfig;
use m2restore::data::{read_ppm, write_ppm};
use m2restore::metrics::psnr;

fn main() -> m2restore::Result<()> {
    let root = std::env::temp_dir().join("m2restore-example-infer");
    std::fs::create_dir_all(&root)?;

    // A tiny end-to-end run: generate a miniature corpus, train briefly,
    // then restore one of the validation images.
    let cfg = RunConfig::parse(
        "size = 32\ntrain_per_type = 6\nval_per_type = 2\nsteps = 30\nbatch = 2\n\
         log_every = 30\nckpt_every = 30\n",
    )?;
    let corpus = root.join("corpus");
    let run = root.join("run");
    cmd_gen(&cfg, &corpus, true)?;
    cmd_train(&cfg, &corpus, &run, None, true)?;

    let input = corpus.join("val").join("haze_0000_degraded.ppm");
    let clean = read_ppm(&corpus.join("val").join("haze_0000_clean.ppm"))?;
    let output = root.join("restored.ppm");
    cmd_infer(&cfg, Some(&run.join("latest.ckpt")), &input, &output)?;

    let degraded = read_ppm(&input)?;
    let restored = read_ppm(&output)?;
    println!("degraded PSNR: {:.2} dB", psnr(&degraded, &clean, 1.0)?);
    println!("restored PSNR: {:.2} dB", psnr(&restored, &clean, 1.0)?);

    // Round-trip sanity: the writer/reader pair is lossless at 8 bits.
    write_ppm(&root.join("copy.ppm"), &restored)?;
    assert_eq!(read_ppm(&root.join("copy.ppm"))?.data, restored.data);
    Ok(())
}
