use super::{Streamline, TrkError, TrkHeader};

/// How stored coordinates relate to voxel indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VoxelShift {
    /// Stored points are in voxel-mm with the origin at a voxel corner;
    /// half a voxel is subtracted before applying the affine.
    #[default]
    HalfVoxel,
    /// Stored points divided by the voxel size are used as indices directly.
    None,
}

fn det3(m: &[[f64; 4]; 4]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Maps a streamline from stored voxel-mm coordinates to world coordinates
/// using the header's `vox_to_ras` matrix.
pub fn apply_affine(header: &TrkHeader, s: &Streamline, shift: VoxelShift) -> Result<Streamline, TrkError> {
    let m: [[f64; 4]; 4] = header.vox_to_ras.map(|row| row.map(f64::from));
    if m[3] != [0.0, 0.0, 0.0, 1.0] || det3(&m) == 0.0 || m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(TrkError::SingularAffine);
    }
    let voxel = header
        .voxel_size
        .map(|v| if v > 0.0 && v.is_finite() { f64::from(v) } else { 1.0 });
    let offset = match shift {
        VoxelShift::HalfVoxel => 0.5,
        VoxelShift::None => 0.0,
    };
    let points = s
        .points
        .iter()
        .map(|p| {
            let idx = [0, 1, 2].map(|i| f64::from(p[i]) / voxel[i] - offset);
            [0, 1, 2].map(|r| (m[r][0] * idx[0] + m[r][1] * idx[1] + m[r][2] * idx[2] + m[r][3]) as f32)
        })
        .collect();
    Ok(Streamline {
        points,
        scalars: s.scalars.clone(),
        properties: s.properties.clone(),
    })
}

/// Sum of Euclidean distances between consecutive points.
pub fn streamline_length(s: &Streamline) -> f64 {
    s.points
        .windows(2)
        .map(|w| {
            let d = [0, 1, 2].map(|i| f64::from(w[1][i]) - f64::from(w[0][i]));
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
        })
        .sum()
}
