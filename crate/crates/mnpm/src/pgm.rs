//! Binary (P5) PGM image writing for spectrogram and note-matrix inspection.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

/// Writes an 8-bit grayscale PGM. `pixels` is row-major, `width * height`
/// bytes, row 0 at the top of the image.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> io::Result<()> {
    assert_eq!(pixels.len(), width * height, "pixel buffer size mismatch");
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", width, height)?;
    w.write_all(pixels)?;
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        write_pgm(&path, 3, 2, &[0, 128, 255, 1, 2, 3]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 128, 255, 1, 2, 3]);
    }
}
