use super::TrkError;

pub const HEADER_SIZE: usize = 1000;

const MAGIC: &[u8; 5] = b"TRACK";

/// The 1000-byte TrackVis v2 header, little-endian.
#[derive(Debug, Clone, PartialEq)]
pub struct TrkHeader {
    pub magic: [u8; 6],
    pub dim: [i16; 3],
    pub voxel_size: [f32; 3],
    pub origin: [f32; 3],
    pub n_scalars: i16,
    pub scalar_names: [u8; 200],
    pub n_properties: i16,
    pub property_names: [u8; 200],
    /// Row-major voxel-to-world affine.
    pub vox_to_ras: [[f32; 4]; 4],
    pub reserved: [u8; 444],
    pub voxel_order: [u8; 4],
    pub pad2: [u8; 4],
    pub image_orientation_patient: [f32; 6],
    pub pad1: [u8; 2],
    pub invert_x: u8,
    pub invert_y: u8,
    pub invert_z: u8,
    pub swap_xy: u8,
    pub swap_yz: u8,
    pub swap_zx: u8,
    /// Declared streamline count; 0 when unknown.
    pub n_count: i32,
    pub version: i32,
    pub header_size: i32,
}

const IDENTITY: [[f32; 4]; 4] = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

impl Default for TrkHeader {
    fn default() -> Self {
        TrkHeader {
            magic: *b"TRACK\0",
            dim: [1, 1, 1],
            voxel_size: [1.0, 1.0, 1.0],
            origin: [0.0; 3],
            n_scalars: 0,
            scalar_names: [0; 200],
            n_properties: 0,
            property_names: [0; 200],
            vox_to_ras: IDENTITY,
            reserved: [0; 444],
            voxel_order: *b"RAS\0",
            pad2: [0; 4],
            image_orientation_patient: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            pad1: [0; 2],
            invert_x: 0,
            invert_y: 0,
            invert_z: 0,
            swap_xy: 0,
            swap_yz: 0,
            swap_zx: 0,
            n_count: 0,
            version: 2,
            header_size: HEADER_SIZE as i32,
        }
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out: [u8; N] = self.buf[self.at..self.at + N].try_into().unwrap();
        self.at += N;
        out
    }
    fn i16(&mut self) -> i16 {
        i16::from_le_bytes(self.take())
    }
    fn i32(&mut self) -> i32 {
        i32::from_le_bytes(self.take())
    }
    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take())
    }
    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }
}

/// Decodes a header, checking the magic, the declared header size and the version.
pub fn parse_header(raw: &[u8]) -> Result<TrkHeader, TrkError> {
    if raw.len() < HEADER_SIZE {
        return Err(TrkError::TruncatedHeader);
    }
    if raw.len() > HEADER_SIZE {
        return Err(TrkError::InvalidHeader(format!("expected {HEADER_SIZE} bytes, got {}", raw.len())));
    }
    if &raw[..5] != MAGIC {
        return Err(TrkError::BadMagic);
    }
    let mut c = Cursor { buf: raw, at: 0 };
    let magic = c.take();
    let dim = [c.i16(), c.i16(), c.i16()];
    let voxel_size = [c.f32(), c.f32(), c.f32()];
    let origin = [c.f32(), c.f32(), c.f32()];
    let n_scalars = c.i16();
    let scalar_names = c.take();
    let n_properties = c.i16();
    let property_names = c.take();
    let mut vox_to_ras = [[0f32; 4]; 4];
    for row in &mut vox_to_ras {
        for v in row.iter_mut() {
            *v = c.f32();
        }
    }
    let reserved = c.take();
    let voxel_order = c.take();
    let pad2 = c.take();
    let mut image_orientation_patient = [0f32; 6];
    for v in &mut image_orientation_patient {
        *v = c.f32();
    }
    let pad1 = c.take();
    let (invert_x, invert_y, invert_z) = (c.u8(), c.u8(), c.u8());
    let (swap_xy, swap_yz, swap_zx) = (c.u8(), c.u8(), c.u8());
    let n_count = c.i32();
    let version = c.i32();
    let header_size = c.i32();
    debug_assert_eq!(c.at, HEADER_SIZE);

    if header_size != HEADER_SIZE as i32 {
        return Err(TrkError::BadHeaderSize(header_size));
    }
    if version != 2 {
        return Err(TrkError::UnsupportedVersion(version));
    }
    if n_scalars < 0 || n_properties < 0 {
        return Err(TrkError::InvalidHeader(format!(
            "negative counts: {n_scalars} scalars, {n_properties} properties"
        )));
    }
    Ok(TrkHeader {
        magic,
        dim,
        voxel_size,
        origin,
        n_scalars,
        scalar_names,
        n_properties,
        property_names,
        vox_to_ras,
        reserved,
        voxel_order,
        pad2,
        image_orientation_patient,
        pad1,
        invert_x,
        invert_y,
        invert_z,
        swap_xy,
        swap_yz,
        swap_zx,
        n_count,
        version,
        header_size,
    })
}

impl TrkHeader {
    pub fn with_counts(n_scalars: i16, n_properties: i16) -> Self {
        TrkHeader {
            n_scalars,
            n_properties,
            ..TrkHeader::default()
        }
    }

    pub fn scalars_per_point(&self) -> usize {
        self.n_scalars.max(0) as usize
    }

    pub fn properties_per_streamline(&self) -> usize {
        self.n_properties.max(0) as usize
    }

    pub fn to_bytes(&self) -> [u8; HEADER_SIZE] {
        let mut out = Vec::with_capacity(HEADER_SIZE);
        out.extend_from_slice(&self.magic);
        self.dim.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        self.voxel_size.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        self.origin.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        out.extend_from_slice(&self.n_scalars.to_le_bytes());
        out.extend_from_slice(&self.scalar_names);
        out.extend_from_slice(&self.n_properties.to_le_bytes());
        out.extend_from_slice(&self.property_names);
        self.vox_to_ras
            .iter()
            .flatten()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        out.extend_from_slice(&self.reserved);
        out.extend_from_slice(&self.voxel_order);
        out.extend_from_slice(&self.pad2);
        self.image_orientation_patient
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        out.extend_from_slice(&self.pad1);
        out.extend_from_slice(&[
            self.invert_x,
            self.invert_y,
            self.invert_z,
            self.swap_xy,
            self.swap_yz,
            self.swap_zx,
        ]);
        out.extend_from_slice(&self.n_count.to_le_bytes());
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.header_size.to_le_bytes());
        out.try_into().expect("header layout is exactly 1000 bytes")
    }
}
