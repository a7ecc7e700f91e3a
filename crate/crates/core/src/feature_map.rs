//! `H × W × L` images of feature vectors (also used for depth maps and
//! voxel heatmaps with `L = 1`).

use crate::binio::*;
use crate::{Error, Result};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAP_MAGIC: &[u8; 4] = b"OCCF";
pub const MAP_VERSION: u32 = 1;

/// Row-major feature image; the `channels` values of a pixel are contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Config(format!("empty feature map {height}×{width}×{channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::Config(format!(
                "feature map {height}×{width}×{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Pixel at column `x`, row `y`.
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let o = (y * self.width + x) * self.channels;
        &self.data[o..o + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let o = (y * self.width + x) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.channels)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAP_MAGIC)?;
        write_u32(w, MAP_VERSION)?;
        write_u32(w, self.height as u32)?;
        write_u32(w, self.width as u32)?;
        write_u32(w, self.channels as u32)?;
        write_f32_slice(w, &self.data)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        read_magic(r, MAP_MAGIC)?;
        let version = read_u32(r)?;
        if version != MAP_VERSION {
            return Err(Error::Format(format!("unsupported feature map version {version}")));
        }
        let h = read_u32(r)? as usize;
        let w = read_u32(r)? as usize;
        let l = read_u32(r)? as usize;
        let data = read_f32_vec(r, h * w * l)?;
        expect_eof(r)?;
        Self::from_data(h, w, l, data).map_err(|e| Error::Format(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_round_trip() {
        let data: Vec<f64> = (0..2 * 3 * 2).map(|v| v as f64 * 0.5).collect();
        let m = FeatureMap::from_data(2, 3, 2, data).unwrap();
        assert_eq!(m.pixel(2, 1), &[10.0 * 0.5, 11.0 * 0.5]);
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 20 + 12 * 4);
        let back = FeatureMap::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(FeatureMap::from_data(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(FeatureMap::from_data(0, 2, 1, vec![]).is_err());
    }
}
