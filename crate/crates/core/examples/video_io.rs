//! Write a synthetic clip as Y4M and as raw planar RGB, read both back and
//! cut the video into patches.
//!
//! cargo run --release --example video_io

use skipsr::synth;
use skipsr::vidio::{extract_patches, load_video, save_video, sidecar_path, VideoFormat};

fn main() -> skipsr::Result<()> {
    let dir = std::env::temp_dir().join("skipsr-video-io");
    std::fs::create_dir_all(&dir).expect("temp dir is writable");
    let v = synth::scene_video(10, 72, 120, 1);

    let y4m = dir.join("scene.y4m");
    let raw = dir.join("scene.rgb");
    save_video(&v, &y4m, VideoFormat::Y4m)?;
    save_video(&v, &raw, VideoFormat::RawRgb)?;

    let from_y4m = load_video(&y4m, VideoFormat::from_path(&y4m))?;
    let from_raw = load_video(&raw, VideoFormat::from_path(&raw))?;
    let worst = v
        .data()
        .iter()
        .zip(from_y4m.data())
        .fold(0.0f32, |m, (a, b)| m.max((a - b).abs()));
    println!("video {:?}", v.dims());
    println!("raw round trip exact: {}", from_raw == v);
    println!("y4m (8-bit 4:2:0) max abs error: {worst:.3}");
    println!("sidecar: {}", sidecar_path(&raw).display());

    let grid = extract_patches(&v);
    println!(
        "{} patches on grid {:?}, reflect padding {:?}",
        grid.len(),
        grid.grid_dims,
        grid.pad
    );
    Ok(())
}
