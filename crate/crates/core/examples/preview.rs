//! Dump a few synthetic faces and headset views as PNGs.
//!
//! `cargo run -p mca-core --example preview -- <out-dir>`

use std::path::PathBuf;

use mca_core::face::{clean_module_render, save_gray_png, save_rgb_png, Avatar, AvatarConfig, ExpressionParams, ViewDirection};

fn main() -> mca_core::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "preview".into()));
    std::fs::create_dir_all(&out)?;
    let avatar = Avatar::new(AvatarConfig::default())?;
    let poses = [
        ("rest", ExpressionParams::rest()),
        ("wink", ExpressionParams { left_eye: -1.0, right_eye: 0.8, ..ExpressionParams::rest() }),
        ("jaw", ExpressionParams { jaw: 1.0, smile: 0.6, left_brow: 1.0, right_brow: 1.0, ..ExpressionParams::rest() }),
        ("frown", ExpressionParams { jaw: -1.0, smile: -1.0, left_brow: -1.0, right_brow: -1.0, stretch: 1.0, gaze: [1.0, -1.0], ..ExpressionParams::rest() }),
    ];
    for (name, p) in poses {
        let (mesh, tex) = avatar.synthesize(&p)?;
        let img = avatar.render_frontal(&mesh, &tex, ViewDirection::FRONTAL)?;
        save_rgb_png(img.width, img.height, &img.rgb, &out.join(format!("{name}_front.png")))?;
        save_rgb_png(tex.size, tex.size, &tex.texels, &out.join(format!("{name}_tex.png")))?;
        for k in 0..3 {
            let g = clean_module_render(&avatar, &mesh, &tex, k)?;
            save_gray_png(&g, &out.join(format!("{name}_cam{k}.png")))?;
        }
    }
    Ok(())
}
