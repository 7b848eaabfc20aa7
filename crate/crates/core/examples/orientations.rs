//! The eight dihedral orientations: how they move pixels, how they compose,
//! and how matching against all of them recovers a rotated query.
//!
//!     cargo run --release --example orientations

use image::{Rgb, RgbImage};
use patchsearch::embedder::{Embedder, ReferenceEmbedder};
use patchsearch::model::squared_l2;
use patchsearch::{apply_orientation, Orientation};

fn main() -> patchsearch::Result<()> {
    // A 3x3 image with distinct pixels shows where each pixel ends up.
    let tiny = RgbImage::from_fn(3, 3, |x, y| Rgb([(y * 3 + x) as u8, 0, 0]));
    for o in Orientation::ALL {
        let out = apply_orientation(&tiny, o)?;
        let rows: Vec<String> = (0..3)
            .map(|y| {
                (0..3)
                    .map(|x| out.get_pixel(x, y)[0].to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        println!("{:>6}: {}", o.to_string(), rows.join(" | "));
    }

    println!("\ncomposition (row applied after column):");
    print!("{:>6}", "");
    for b in Orientation::ALL {
        print!("{:>7}", b.to_string());
    }
    println!();
    for a in Orientation::ALL {
        print!("{:>6}", a.to_string());
        for b in Orientation::ALL {
            print!("{:>7}", a.compose(b).to_string());
        }
        println!();
    }

    // Embed every orientation of a textured patch, then query with a rotated copy.
    let patch = RgbImage::from_fn(224, 224, |x, y| {
        let stripe = ((x + 2 * y) / 9 % 2) as u8;
        Rgb([120 + 80 * stripe, 40 + (x / 4) as u8, 90 + (y / 3) as u8])
    });
    let stored: Vec<_> = Orientation::ALL
        .iter()
        .map(|&o| Ok((o, ReferenceEmbedder.embed(&apply_orientation(&patch, o)?)?)))
        .collect::<patchsearch::Result<_>>()?;
    let turned = Orientation::from_code(3).expect("valid code");
    let q = ReferenceEmbedder.embed(&apply_orientation(&patch, turned)?)?;
    let (best, d) = stored
        .iter()
        .map(|(o, e)| (*o, squared_l2(q.as_slice(), e.as_slice())))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("eight entries");
    println!("\nquery rotated by {turned}: nearest stored orientation {best} at squared distance {d:.3e}");
    Ok(())
}
