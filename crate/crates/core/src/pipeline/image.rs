//! Binary PPM (P6) / PGM (P5) I/O and separable resampling of `[C, H, W]`
//! images with values in `[0, 1]`.

use std::path::Path;

use crate::error::{invalid_input, OetrError, Result};
use crate::numerics::Tensor;

fn format_err(msg: impl Into<String>) -> OetrError {
    OetrError::Format(msg.into())
}

/// Header fields in order, skipping whitespace and `#` comments; returns the
/// fields and the offset of the first raster byte.
fn header(bytes: &[u8]) -> Result<([usize; 3], u8, usize)> {
    if bytes.len() < 2 || bytes[0] != b'P' || !matches!(bytes[1], b'5' | b'6') {
        return Err(format_err("not a binary PGM (P5) or PPM (P6) file"));
    }
    let kind = bytes[1];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(format_err("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err("malformed header number"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(format_err("missing whitespace after header"));
    }
    Ok((fields, kind, pos + 1))
}

/// Decodes a P5/P6 file into `[C, H, W]` values divided by the file's
/// maximum value; returns that maximum as well.
pub fn decode_pnm(bytes: &[u8]) -> Result<(Tensor<f64>, u16)> {
    let ([w, h, maxval], kind, start) = header(bytes)?;
    if w == 0 || h == 0 {
        return Err(invalid_input("image has zero extent"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format_err(format!("maximum value {maxval} outside 1..=65535")));
    }
    let c = if kind == b'6' { 3 } else { 1 };
    let wide = maxval > 255;
    let sample_bytes = if wide { 2 } else { 1 };
    let need = c * h * w * sample_bytes;
    let raster = bytes
        .get(start..start + need)
        .ok_or_else(|| format_err(format!("raster holds {} of {need} bytes", bytes.len() - start)))?;
    let scale = 1.0 / maxval as f64;
    let mut out = Tensor::zeros([c, h, w]);
    let data = out.data_mut();
    for i in 0..h * w {
        for k in 0..c {
            let s = i * c + k;
            let v = if wide {
                u16::from_be_bytes([raster[2 * s], raster[2 * s + 1]]) as f64
            } else {
                raster[s] as f64
            };
            if v > maxval as f64 {
                return Err(format_err(format!("sample {v} exceeds maximum {maxval}")));
            }
            data[k * h * w + i] = v * scale;
        }
    }
    Ok((out, maxval as u16))
}

/// Encodes `[1, H, W]` as P5 or `[3, H, W]` as P6, quantizing to `maxval`.
pub fn encode_pnm(image: &Tensor<f64>, maxval: u16) -> Result<Vec<u8>> {
    let (c, h, w) = image.dims3()?;
    let kind = match c {
        1 => '5',
        3 => '6',
        _ => return Err(invalid_input(format!("cannot encode {c} channels"))),
    };
    if maxval == 0 {
        return Err(invalid_input("maximum value must be positive"));
    }
    let mut out = format!("P{kind}\n{w} {h}\n{maxval}\n").into_bytes();
    let data = image.data();
    let m = maxval as f64;
    for i in 0..h * w {
        for k in 0..c {
            let q = (data[k * h * w + i].clamp(0.0, 1.0) * m).round() as u16;
            if maxval > 255 {
                out.extend_from_slice(&q.to_be_bytes());
            } else {
                out.push(q as u8);
            }
        }
    }
    Ok(out)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor<f64>> {
    Ok(decode_pnm(&std::fs::read(path)?)?.0)
}

/// Writes an 8-bit PGM or PPM depending on the channel count.
pub fn write_image(path: impl AsRef<Path>, image: &Tensor<f64>) -> Result<()> {
    std::fs::write(path, encode_pnm(image, 255)?)?;
    Ok(())
}

/// Three-channel view of a grayscale or RGB image.
pub fn to_rgb(image: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (c, h, w) = image.dims3()?;
    match c {
        3 => Ok(image.clone()),
        1 => Tensor::new([3, h, w], image.data().repeat(3)),
        _ => Err(invalid_input(format!("expected 1 or 3 channels, got {c}"))),
    }
}

/// Source taps and weights for each output sample along one axis.
///
/// Output sample `u` sits at source coordinate `origin + (u + 0.5) / ratio`;
/// source pixel `i` covers `[i, i + 1)`. A triangle filter widened by
/// `1 / ratio` when shrinking keeps downsampling alias-free. Taps beyond the
/// source edge fold onto the border pixel.
fn axis_taps(out_len: usize, src_len: usize, origin: f64, ratio: f64) -> Vec<Vec<(usize, f64)>> {
    let support = (1.0 / ratio).max(1.0);
    (0..out_len)
        .map(|u| {
            let center = origin + (u as f64 + 0.5) / ratio;
            let lo = (center - support - 0.5).floor() as i64;
            let hi = (center + support - 0.5).ceil() as i64;
            let mut taps: Vec<(usize, f64)> = Vec::new();
            let mut total = 0.0;
            for i in lo..=hi {
                let wgt = 1.0 - ((i as f64 + 0.5 - center) / support).abs();
                if wgt <= 0.0 {
                    continue;
                }
                let idx = i.clamp(0, src_len as i64 - 1) as usize;
                total += wgt;
                match taps.iter_mut().find(|t| t.0 == idx) {
                    Some(t) => t.1 += wgt,
                    None => taps.push((idx, wgt)),
                }
            }
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

/// Resamples the window starting at continuous `origin = (x, y)` by `ratio`
/// into an `out_w x out_h` image.
pub fn resample(image: &Tensor<f64>, origin: [f64; 2], ratio: f64, out_w: usize, out_h: usize) -> Result<Tensor<f64>> {
    let (c, h, w) = image.dims3()?;
    if !(ratio.is_finite() && ratio > 0.0) || out_w == 0 || out_h == 0 {
        return Err(invalid_input(format!("cannot resample by {ratio} to {out_w}x{out_h}")));
    }
    let cols = axis_taps(out_w, w, origin[0], ratio);
    let rows = axis_taps(out_h, h, origin[1], ratio);
    let src = image.data();
    let mut tmp = vec![0.0; c * h * out_w];
    for ch in 0..c {
        for y in 0..h {
            let line = &src[(ch * h + y) * w..(ch * h + y + 1) * w];
            for (x, taps) in cols.iter().enumerate() {
                tmp[(ch * h + y) * out_w + x] = taps.iter().map(|&(i, wt)| line[i] * wt).sum();
            }
        }
    }
    let mut out = Tensor::zeros([c, out_h, out_w]);
    let dst = out.data_mut();
    for ch in 0..c {
        for (y, taps) in rows.iter().enumerate() {
            let row = &mut dst[(ch * out_h + y) * out_w..(ch * out_h + y + 1) * out_w];
            for &(i, wt) in taps {
                let srow = &tmp[(ch * h + i) * out_w..(ch * h + i + 1) * out_w];
                for (d, s) in row.iter_mut().zip(srow) {
                    *d += s * wt;
                }
            }
        }
    }
    Ok(out)
}
