//! On-disk formats: binary PPM (P6) frames, binary PGM (P5) masks with
//! 0/255 values, PCM16 mono WAV. Frame files are named by zero-based index.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{AudioTrack, MaskSequence, MediaError, VideoClip, SAMPLE_RATE};

pub fn frame_file_name(index: usize, ext: &str) -> String {
    format!("{index:06}.{ext}")
}

pub fn encode_ppm(width: u32, height: u32, rgb: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

pub fn encode_pgm(width: u32, height: u32, mask: &[bool]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(mask.iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

/// Parses a netpbm header of the exact form this module writes:
/// magic, single whitespace separators, maxval 255.
fn parse_header<'a>(bytes: &'a [u8], magic: &[u8]) -> Result<(u32, u32, &'a [u8]), MediaError> {
    let malformed = |m: &str| MediaError::Malformed(m.to_string());
    if !bytes.starts_with(magic) {
        return Err(malformed("bad magic"));
    }
    let mut fields = Vec::with_capacity(3);
    let mut pos = magic.len();
    while fields.len() < 3 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("truncated header"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).map_err(|_| malformed("header"))?;
        fields.push(text.parse::<u32>().map_err(|_| malformed("header number"))?);
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(malformed("missing header terminator"));
    }
    if fields[2] != 255 {
        return Err(malformed("maxval must be 255"));
    }
    Ok((fields[0], fields[1], &bytes[pos + 1..]))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>), MediaError> {
    let (w, h, body) = parse_header(bytes, b"P6")?;
    if body.len() != w as usize * h as usize * 3 {
        return Err(MediaError::Malformed(format!("ppm body has {} bytes", body.len())));
    }
    Ok((w, h, body.to_vec()))
}

pub fn decode_pgm(bytes: &[u8]) -> Result<(u32, u32, Vec<bool>), MediaError> {
    let (w, h, body) = parse_header(bytes, b"P5")?;
    if body.len() != w as usize * h as usize {
        return Err(MediaError::Malformed(format!("pgm body has {} bytes", body.len())));
    }
    body.iter()
        .map(|&v| match v {
            0 => Ok(false),
            255 => Ok(true),
            other => Err(MediaError::Malformed(format!("mask value {other} is not 0 or 255"))),
        })
        .collect::<Result<Vec<_>, _>>()
        .map(|m| (w, h, m))
}

pub fn wav_bytes(track: &AudioTrack) -> Vec<u8> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: track.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec).expect("in-memory wav writer");
        let mut samples = writer.get_i16_writer(track.samples.len() as u32);
        for &s in &track.samples {
            samples.write_sample(s);
        }
        samples.flush().expect("in-memory wav flush");
        writer.finalize().expect("in-memory wav finalize");
    }
    cursor.into_inner()
}

pub fn read_wav_bytes(bytes: &[u8]) -> Result<AudioTrack, MediaError> {
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(|e| MediaError::Malformed(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(MediaError::Malformed("wav must be PCM16 mono".into()));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(MediaError::RateMismatch { expected: SAMPLE_RATE, found: spec.sample_rate });
    }
    let samples = reader
        .into_samples::<i16>()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| MediaError::Malformed(e.to_string()))?;
    Ok(AudioTrack { sample_rate: spec.sample_rate, samples })
}

pub fn write_wav(path: &Path, track: &AudioTrack) -> Result<(), MediaError> {
    fs::write(path, wav_bytes(track))?;
    Ok(())
}

pub fn read_wav(path: &Path) -> Result<AudioTrack, MediaError> {
    read_wav_bytes(&fs::read(path)?)
}

/// Writes one PPM per frame and returns the written paths in order.
pub fn write_frames_dir(dir: &Path, clip: &VideoClip) -> Result<Vec<PathBuf>, MediaError> {
    fs::create_dir_all(dir)?;
    clip.frames
        .iter()
        .enumerate()
        .map(|(i, frame)| {
            let path = dir.join(frame_file_name(i, "ppm"));
            fs::write(&path, encode_ppm(clip.width, clip.height, frame))?;
            Ok(path)
        })
        .collect()
}

pub fn read_frames_dir(dir: &Path, frame_count: usize, fps: u32) -> Result<VideoClip, MediaError> {
    let mut frames = Vec::with_capacity(frame_count);
    let mut dims = None;
    for i in 0..frame_count {
        let (w, h, data) = decode_ppm(&fs::read(dir.join(frame_file_name(i, "ppm")))?)?;
        match dims {
            None => dims = Some((w, h)),
            Some(d) if d != (w, h) => return Err(MediaError::DimMismatch { expected: d, found: (w, h) }),
            Some(_) => {}
        }
        frames.push(data);
    }
    let (width, height) = dims.ok_or(MediaError::EmptyList)?;
    VideoClip::new(width, height, fps, frames)
}

pub fn write_mask_dir(dir: &Path, masks: &MaskSequence) -> Result<(), MediaError> {
    fs::create_dir_all(dir)?;
    for (i, frame) in masks.frames.iter().enumerate() {
        fs::write(dir.join(frame_file_name(i, "pgm")), encode_pgm(masks.width, masks.height, frame))?;
    }
    Ok(())
}

pub fn read_mask_dir(dir: &Path, frame_count: usize) -> Result<MaskSequence, MediaError> {
    let mut frames = Vec::with_capacity(frame_count);
    let mut dims = (0, 0);
    for i in 0..frame_count {
        let (w, h, mask) = decode_pgm(&fs::read(dir.join(frame_file_name(i, "pgm")))?)?;
        if i > 0 && dims != (w, h) {
            return Err(MediaError::DimMismatch { expected: dims, found: (w, h) });
        }
        dims = (w, h);
        frames.push(mask);
    }
    Ok(MaskSequence { width: dims.0, height: dims.1, frames })
}

/// SHA-256 over the concatenated PPM encodings of every frame, so the digest
/// can be recomputed from a written frames directory by concatenating files.
pub fn clip_digest(clip: &VideoClip) -> String {
    let mut hasher = Sha256::new();
    let header = format!("P6\n{} {}\n255\n", clip.width, clip.height);
    for frame in &clip.frames {
        hasher.update(header.as_bytes());
        hasher.update(frame);
    }
    hex::encode(hasher.finalize())
}

/// Digest over `(character_id, masks)` pairs in the given order: each id
/// followed by a newline and then its PGM frames.
pub fn masks_digest<'a>(entries: impl IntoIterator<Item = (&'a str, &'a MaskSequence)>) -> String {
    let mut hasher = Sha256::new();
    for (id, masks) in entries {
        hasher.update(id.as_bytes());
        hasher.update(b"\n");
        for frame in &masks.frames {
            hasher.update(encode_pgm(masks.width, masks.height, frame));
        }
    }
    hex::encode(hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical::sha256_hex;

    #[test]
    fn ppm_layout_is_exact() {
        let bytes = encode_ppm(2, 1, &[1, 2, 3, 4, 5, 6]);
        assert_eq!(&bytes[..], b"P6\n2 1\n255\n\x01\x02\x03\x04\x05\x06");
        assert_eq!(decode_ppm(&bytes).unwrap(), (2, 1, vec![1, 2, 3, 4, 5, 6]));
    }

    #[test]
    fn pgm_uses_0_and_255() {
        let bytes = encode_pgm(3, 1, &[true, false, true]);
        assert_eq!(&bytes[..], b"P5\n3 1\n255\n\xff\x00\xff");
        assert_eq!(decode_pgm(&bytes).unwrap().2, vec![true, false, true]);
        let mut bad = bytes.clone();
        *bad.last_mut().unwrap() = 7;
        assert!(decode_pgm(&bad).is_err());
    }

    #[test]
    fn truncated_ppm_is_rejected() {
        let bytes = encode_ppm(2, 2, &[0; 12]);
        assert!(decode_ppm(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_ppm(b"P3\n1 1\n255\n").is_err());
    }

    #[test]
    fn wav_header_is_canonical_pcm16() {
        let track = AudioTrack::new(vec![1, -1, 300]);
        let bytes = wav_bytes(&track);
        assert_eq!(bytes.len(), 44 + 6);
        assert_eq!(&bytes[0..4], b"RIFF");
        assert_eq!(&bytes[8..16], b"WAVEfmt ");
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 16000);
        assert_eq!(read_wav_bytes(&bytes).unwrap(), track);
    }

    #[test]
    fn clip_digest_matches_file_concatenation() {
        let dir = tempfile::tempdir().unwrap();
        let mut clip = VideoClip::filled(3, 2, 24, 4, [9, 8, 7]);
        clip.frames[2][0] = 1;
        let paths = write_frames_dir(dir.path(), &clip).unwrap();
        let mut all = Vec::new();
        for p in &paths {
            all.extend(fs::read(p).unwrap());
        }
        assert_eq!(clip_digest(&clip), sha256_hex(&all));
        assert_eq!(read_frames_dir(dir.path(), 4, 24).unwrap(), clip);
    }

    #[test]
    fn mask_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut masks = MaskSequence::empty(4, 3, 2);
        masks.frames[1][5] = true;
        write_mask_dir(dir.path(), &masks).unwrap();
        assert_eq!(read_mask_dir(dir.path(), 2).unwrap(), masks);
    }
}
