//! Load a directory of PGM images as a class pool.

use std::fs;

use metaaug::tasks::load_image_pool;

fn main() -> metaaug::Result<()> {
    let root = tempfile::tempdir()?;
    for (c, shade) in [("circle", 40u8), ("square", 200u8)] {
        let dir = root.path().join(c);
        fs::create_dir(&dir)?;
        for i in 0..3u8 {
            let mut bytes = b"P5\n8 8\n255\n".to_vec();
            bytes.extend((0..64u8).map(|p| shade.wrapping_add(p % 8).wrapping_add(i)));
            fs::write(dir.join(format!("{i}.pgm")), bytes)?;
        }
    }
    let pool = load_image_pool(root.path())?;
    for class in pool.classes() {
        println!(
            "{}: {} images of {} pixels",
            class.name,
            class.examples.len(),
            pool.dim()
        );
    }
    Ok(())
}
