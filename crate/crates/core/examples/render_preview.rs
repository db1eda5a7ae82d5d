//! Dump a grid of rendered samples for quick visual inspection.

use rnd_core::image_data::Image;
use rnd_core::scm_data::{render, Domain, Family};

fn main() {
    let families = [
        Family::Blob,
        Family::Cross,
        Family::Ring,
        Family::Diamond,
        Family::HollowSquare,
        Family::Stripes,
    ];
    let size = 32usize;
    let cols = 8usize;
    let mut sheet = Image::new(3, families.len() * 2 * size, cols * size);
    for (fi, fam) in families.iter().enumerate() {
        for (di, dom) in [Domain::Main, Domain::Shifted].iter().enumerate() {
            for k in 0..cols {
                let t = k as f64 / (cols - 1) as f64;
                let e = k as f64 / (cols - 1) as f64;
                let img = render(size, *fam, t, 1000 + k as u64, e, *dom);
                let row0 = (fi * 2 + di) * size;
                for c in 0..3 {
                    for y in 0..size {
                        for x in 0..size {
                            sheet.set(c, row0 + y, k * size + x, img.get(c, y, x));
                        }
                    }
                }
            }
        }
    }
    sheet.save_png(std::path::Path::new("/tmp/render_preview.png")).unwrap();
    println!("wrote /tmp/render_preview.png");
}
