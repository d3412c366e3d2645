//! Regenerates the bundled toy corpus under data/toy/. The files are
//! committed; rerun this only when the generator changes.

use std::fs;
use std::path::Path;

use synmt::toy::{corpus_lines, main_task};

fn main() {
    let pairs = main_task(240, 7);
    let (train, dev) = pairs.split_at(200);
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy");
    fs::create_dir_all(&dir).expect("create data/toy");
    for (name, split) in [("train", train), ("dev", dev)] {
        let (src, trees, tgt, align) = corpus_lines(split);
        for (ext, lines) in
            [("src", &src), ("tree", &trees), ("tgt", &tgt), ("align", &align)]
        {
            let path = dir.join(format!("{}.{}", name, ext));
            fs::write(&path, lines.join("\n") + "\n").expect("write corpus file");
        }
    }
    println!("wrote {} train and {} dev pairs to {}", train.len(), dev.len(), dir.display());
}
