use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxcycle::data::nifti::*;
use voxcycle::data::Volume;

/// Header assembled field by field at the documented NIfTI-1 offsets, in
/// either byte order, independent of the crate's writer.
struct Fixture {
    big: bool,
    bytes: Vec<u8>,
}

impl Fixture {
    fn new(big: bool) -> Self {
        let mut f = Fixture {
            big,
            bytes: vec![0; 352],
        };
        f.i32(0, 348);
        f.bytes[344..348].copy_from_slice(b"n+1\0");
        f.f32(108, 352.0);
        f
    }
    fn put(&mut self, off: usize, le: &[u8]) {
        let mut b = le.to_vec();
        if self.big {
            b.reverse();
        }
        self.bytes[off..off + b.len()].copy_from_slice(&b);
    }
    fn i16(&mut self, off: usize, v: i16) {
        self.put(off, &v.to_le_bytes());
    }
    fn i32(&mut self, off: usize, v: i32) {
        self.put(off, &v.to_le_bytes());
    }
    fn f32(&mut self, off: usize, v: f32) {
        self.put(off, &v.to_le_bytes());
    }
    fn dims(&mut self, dims: &[i16]) {
        self.i16(40, dims.len() as i16);
        for (i, &d) in dims.iter().enumerate() {
            self.i16(42 + 2 * i, d);
        }
    }
    fn datatype(&mut self, code: i16, bitpix: i16) {
        self.i16(70, code);
        self.i16(72, bitpix);
    }
    fn pixdim(&mut self, p: [f32; 3]) {
        for (k, v) in p.into_iter().enumerate() {
            self.f32(80 + 4 * k, v);
        }
    }
    fn scl(&mut self, slope: f32, inter: f32) {
        self.f32(112, slope);
        self.f32(116, inter);
    }
    fn sform(&mut self, rows: [[f32; 4]; 3]) {
        self.i16(254, 1);
        for (r, row) in rows.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                self.f32(280 + 16 * r + 4 * c, v);
            }
        }
    }
    fn body_f32(&mut self, vals: &[f32]) {
        for v in vals {
            let mut b = v.to_le_bytes();
            if self.big {
                b.reverse();
            }
            self.bytes.extend_from_slice(&b);
        }
    }
    fn body_i16(&mut self, vals: &[i16]) {
        for v in vals {
            let mut b = v.to_le_bytes();
            if self.big {
                b.reverse();
            }
            self.bytes.extend_from_slice(&b);
        }
    }
}

/// Value at (d, h, w) of a file whose x axis (fastest on disk) is d.
fn disk_index(ext: [usize; 3], d: usize, h: usize, w: usize) -> usize {
    (w * ext[1] + h) * ext[0] + d
}

#[test]
fn float_fixture_parses_in_both_byte_orders() {
    let ext = [4, 3, 2];
    let disk: Vec<f32> = (0..24).map(|i| i as f32 * 0.5 - 3.0).collect();
    for big in [false, true] {
        let mut f = Fixture::new(big);
        f.dims(&[4, 3, 2]);
        f.datatype(DT_FLOAT32, 32);
        f.pixdim([1.5, 2.0, 2.5]);
        f.scl(1.0, 0.0);
        f.body_f32(&disk);
        if big {
            assert_eq!(i32::from_le_bytes(f.bytes[0..4].try_into().unwrap()), 1_543_569_408);
        }
        assert_eq!(
            detect_endian(&f.bytes),
            Some(if big { Endian::Big } else { Endian::Little })
        );
        let v = parse_nifti(&f.bytes).unwrap();
        assert_eq!(v.extents(), ext);
        assert_eq!(v.spacing(), [1.5, 2.0, 2.5]);
        for d in 0..4 {
            for h in 0..3 {
                for w in 0..2 {
                    assert_eq!(v.voxels()[v.index(d, h, w)], disk[disk_index(ext, d, h, w)]);
                }
            }
        }
        let a = v.affine();
        assert_eq!([a[0][0], a[1][1], a[2][2], a[3][3]], [1.5, 2.0, 2.5, 1.0]);
    }
}

#[test]
fn int16_scaling_applies_slope_and_intercept() {
    let mut f = Fixture::new(false);
    f.dims(&[2, 2, 2]);
    f.datatype(DT_INT16, 16);
    f.scl(2.0, 1.0);
    f.body_i16(&[3; 8]);
    let v = parse_nifti(&f.bytes).unwrap();
    assert!(v.voxels().iter().all(|&x| x == 7.0));
}

#[test]
fn zero_slope_means_unscaled() {
    let mut f = Fixture::new(true);
    f.dims(&[2, 1, 1]);
    f.datatype(DT_UINT8, 8);
    f.scl(0.0, 5.0);
    f.bytes.extend_from_slice(&[9, 200]);
    let v = parse_nifti(&f.bytes).unwrap();
    assert_eq!(v.voxels(), &[9.0, 200.0]);
}

#[test]
fn sform_takes_precedence_over_pixdim() {
    let rows = [[0.0, -2.0, 0.0, 10.0], [1.5, 0.0, 0.0, -4.0], [0.0, 0.0, 3.0, 7.25]];
    let mut f = Fixture::new(true);
    f.dims(&[1, 1, 1]);
    f.datatype(DT_FLOAT32, 32);
    f.pixdim([9.0, 9.0, 9.0]);
    f.sform(rows);
    f.body_f32(&[0.25]);
    let a = parse_nifti(&f.bytes).unwrap().affine();
    for r in 0..3 {
        assert_eq!(a[r], rows[r]);
    }
    assert_eq!(a[3], [0.0, 0.0, 0.0, 1.0]);
}

#[test]
fn four_dimensional_three_channel() {
    let mut f = Fixture::new(false);
    f.dims(&[2, 2, 1, 3]);
    f.datatype(DT_FLOAT32, 32);
    let disk: Vec<f32> = (0..12).map(|i| i as f32).collect();
    f.body_f32(&disk);
    let v = parse_nifti(&f.bytes).unwrap();
    assert_eq!(v.channels(), 3);
    assert_eq!(v.channel(2), &[8.0, 10.0, 9.0, 11.0]);
}

fn random_volume(rng: &mut ChaCha8Rng, channels: usize) -> Volume {
    let ext = [rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..6)];
    let n = ext.iter().product::<usize>() * channels;
    let vox: Vec<f32> = (0..n).map(|_| rng.random_range(-1e3f32..1e3)).collect();
    let mut affine = [[0.0f32; 4]; 4];
    for row in affine.iter_mut().take(3) {
        for v in row.iter_mut() {
            *v = rng.random_range(-5.0f32..5.0);
        }
    }
    affine[3][3] = 1.0;
    let spacing = [
        rng.random_range(0.5f32..3.0),
        rng.random_range(0.5f32..3.0),
        rng.random_range(0.5f32..3.0),
    ];
    Volume::new(ext, channels, vox)
        .unwrap()
        .with_spacing(spacing)
        .unwrap()
        .with_affine(affine)
}

#[test]
fn twenty_random_round_trips_including_swapped() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for i in 0..20 {
        let v = random_volume(&mut rng, if i % 4 == 3 { 3 } else { 1 });
        let endian = if i % 2 == 0 { Endian::Little } else { Endian::Big };
        let bytes = write_nifti_with(&v, endian);
        assert_eq!(detect_endian(&bytes), Some(endian));
        let back = parse_nifti(&bytes).unwrap();
        assert_eq!(back.extents(), v.extents());
        assert_eq!(back.channels(), v.channels());
        assert_eq!(back.spacing(), v.spacing());
        assert_eq!(back.affine(), v.affine());
        let same = back
            .voxels()
            .iter()
            .zip(v.voxels())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same, "fixture {i}");
        assert_eq!(write_nifti_with(&back, endian), bytes, "fixture {i} not byte-stable");
    }
}

#[test]
fn written_header_is_352_bytes() {
    let v = Volume::filled([4, 4, 4], 1, 0.5).unwrap();
    let bytes = write_nifti(&v);
    assert_eq!(bytes.len(), DATA_OFFSET + 64 * 4);
    assert_eq!(&bytes[344..348], b"n+1\0");
    assert_eq!(i32::from_le_bytes(bytes[0..4].try_into().unwrap()), HEADER_LEN as i32);
}

#[test]
fn errors_carry_byte_offsets() {
    let good = {
        let mut f = Fixture::new(false);
        f.dims(&[2, 2, 2]);
        f.datatype(DT_FLOAT32, 32);
        f.body_f32(&[0.0; 8]);
        f.bytes
    };
    assert!(parse_nifti(&good).is_ok());

    let e = parse_nifti(&good[..100]).unwrap_err();
    assert!(matches!(e, NiftiError::TruncatedHeader { offset: 100 }));

    let mut b = good.clone();
    b[0..4].copy_from_slice(&349i32.to_le_bytes());
    assert!(matches!(parse_nifti(&b).unwrap_err(), NiftiError::SizeofHdr { .. }));

    let mut b = good.clone();
    b[344..348].copy_from_slice(b"ni1\0");
    let e = parse_nifti(&b).unwrap_err();
    assert!(matches!(e, NiftiError::BadMagic { .. }));
    assert_eq!(e.offset(), 344);

    let mut b = good.clone();
    b[70..72].copy_from_slice(&64i16.to_le_bytes());
    let e = parse_nifti(&b).unwrap_err();
    assert!(matches!(e, NiftiError::UnsupportedDatatype { code: 64 }));
    assert_eq!(e.offset(), 70);

    let e = parse_nifti(&good[..good.len() - 3]).unwrap_err();
    match e {
        NiftiError::TruncatedBody {
            offset,
            needed,
            available,
        } => {
            assert_eq!((needed, available), (32, 29));
            assert_eq!(offset, 352 + 29);
        }
        other => panic!("{other:?}"),
    }

    let mut b = good.clone();
    b[40..42].copy_from_slice(&5i16.to_le_bytes());
    assert_eq!(parse_nifti(&b).unwrap_err().offset(), 40);
}
