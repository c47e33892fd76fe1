//! File formats: legacy VTK (ASCII structured points), CSV tables, and dense
//! matrices in binary and text form.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mesh::{QuadtreeMesh, UniformGrid, DOMAIN_MIN};
use crate::spectrum::Spectrum;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn vtk_header(w: &mut impl Write, title: &str, grid: &UniformGrid) -> Result<()> {
    let np = grid.nodes_per_side();
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{title}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET STRUCTURED_POINTS")?;
    writeln!(w, "DIMENSIONS {np} {np} 1")?;
    writeln!(w, "ORIGIN {DOMAIN_MIN:?} {DOMAIN_MIN:?} 0.0")?;
    writeln!(w, "SPACING {:?} {:?} 1.0", grid.h(), grid.h())?;
    Ok(())
}

fn vtk_scalars(w: &mut impl Write, name: &str, values: &[f64]) -> Result<()> {
    writeln!(w, "SCALARS {name} double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for v in values {
        writeln!(w, "{v:e}")?;
    }
    Ok(())
}

/// Nodal fields on the grid, one `SCALARS` block each.
pub fn write_vtk_point_data(path: &Path, grid: &UniformGrid, fields: &[(&str, &[f64])]) -> Result<()> {
    let mut w = create(path)?;
    vtk_header(&mut w, "nodal fields", grid)?;
    writeln!(w, "POINT_DATA {}", grid.node_count())?;
    for (name, values) in fields {
        if values.len() != grid.node_count() {
            return Err(Error::Dimension(format!("field '{name}' has {} values", values.len())));
        }
        vtk_scalars(&mut w, name, values)?;
    }
    w.flush()?;
    Ok(())
}

/// Cell fields on the grid, one `SCALARS` block each.
pub fn write_vtk_cell_data(path: &Path, grid: &UniformGrid, fields: &[(&str, &[f64])]) -> Result<()> {
    let mut w = create(path)?;
    vtk_header(&mut w, "cell fields", grid)?;
    writeln!(w, "CELL_DATA {}", grid.cell_count())?;
    for (name, values) in fields {
        if values.len() != grid.cell_count() {
            return Err(Error::Dimension(format!("field '{name}' has {} values", values.len())));
        }
        vtk_scalars(&mut w, name, values)?;
    }
    w.flush()?;
    Ok(())
}

/// Spreads per-leaf values over the background cells they cover.
pub fn leaf_values_to_cells(mesh: &QuadtreeMesh, values: &[f64]) -> Vec<f64> {
    mesh.cell_owners().iter().map(|&k| values[k]).collect()
}

/// CSV with a header row. Numbers use Rust's shortest round-trip form.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// `x,y,value` per node.
pub fn write_nodal_csv(path: &Path, grid: &UniformGrid, values: &[f64]) -> Result<()> {
    let rows: Vec<Vec<f64>> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let [x, y] = grid.node_coords(i);
            vec![x, y, v]
        })
        .collect();
    write_csv(path, &["x", "y", "value"], &rows)
}

/// One row per leaf: geometry.
pub fn write_mesh_csv(path: &Path, mesh: &QuadtreeMesh) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "leaf_id,level,x_min,y_min,size,area")?;
    for (k, l) in mesh.leaves().iter().enumerate() {
        writeln!(
            w,
            "{k},{},{:?},{:?},{:?},{:?}",
            l.level,
            l.x_min(),
            l.y_min(),
            l.size(),
            l.area()
        )?;
    }
    w.flush()?;
    Ok(())
}

/// One row per leaf: `leaf_id` followed by the named columns.
pub fn write_leaf_csv(path: &Path, columns: &[(&str, &[f64])]) -> Result<()> {
    let n = columns.first().map_or(0, |c| c.1.len());
    if columns.iter().any(|c| c.1.len() != n) {
        return Err(Error::Dimension("leaf columns differ in length".into()));
    }
    let mut w = create(path)?;
    let names: Vec<&str> = columns.iter().map(|c| c.0).collect();
    writeln!(w, "leaf_id,{}", names.join(","))?;
    for k in 0..n {
        let vals: Vec<String> = columns.iter().map(|c| format!("{:?}", c.1[k])).collect();
        writeln!(w, "{k},{}", vals.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// `rank,eigenvalue` preceded by `#` lines naming criterion, cycle and
/// leaf count.
pub fn write_spectrum_csv(path: &Path, s: &Spectrum) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "# criterion = {}", s.label.criterion)?;
    writeln!(w, "# cycle = {}", s.label.cycle)?;
    writeln!(w, "# leaves = {}", s.label.leaves)?;
    writeln!(w, "rank,eigenvalue")?;
    for (i, v) in s.values.iter().enumerate() {
        writeln!(w, "{},{v:?}", i + 1)?;
    }
    w.flush()?;
    Ok(())
}

/// Two little-endian `u64` dimensions, then row-major little-endian `f64`.
pub fn write_dense_binary(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            w.write_all(&m[(r, c)].to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dense_binary(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let rows = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let cols = u64::from_le_bytes(b8) as usize;
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            r.read_exact(&mut b8)?;
            m[(i, j)] = f64::from_le_bytes(b8);
        }
    }
    Ok(m)
}

/// Plain comma-separated rows, no header.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = create(path)?;
    for r in 0..m.nrows() {
        let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Whitespace-separated text: a `rows cols` line, then the rows.
pub fn write_matrix_text(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{} {}", m.nrows(), m.ncols())?;
    for r in 0..m.nrows() {
        let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_text(path: &Path) -> Result<DMatrix<f64>> {
    let reader = BufReader::new(File::open(path)?);
    let mut tokens = Vec::new();
    for line in reader.lines() {
        tokens.extend(line?.split_whitespace().map(str::to_string));
    }
    let bad = |m: String| Error::InvalidArgument(format!("{}: {m}", path.display()));
    if tokens.len() < 2 {
        return Err(bad("missing dimension header".into()));
    }
    let rows: usize = tokens[0].parse().map_err(|_| bad("bad row count".into()))?;
    let cols: usize = tokens[1].parse().map_err(|_| bad("bad column count".into()))?;
    if tokens.len() != 2 + rows * cols {
        return Err(bad(format!(
            "expected {} entries, found {}",
            rows * cols,
            tokens.len() - 2
        )));
    }
    let vals = tokens[2..]
        .iter()
        .map(|t| t.parse::<f64>().map_err(|_| bad(format!("bad number '{t}'"))))
        .collect::<Result<Vec<f64>>>()?;
    Ok(DMatrix::from_row_slice(rows, cols, &vals))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("infomesh-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn dense_binary_round_trip() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, -2.5, 3.25, 1e-300, 0.1, f64::MAX]);
        let p = tmp("m.bin");
        write_dense_binary(&p, &m).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 16 + 6 * 8);
        assert_eq!(read_dense_binary(&p).unwrap(), m);
    }

    #[test]
    fn text_matrix_round_trip() {
        let m = DMatrix::from_row_slice(2, 2, &[0.1, 2.0, -3.0, 1.0 / 3.0]);
        let p = tmp("m.txt");
        write_matrix_text(&p, &m).unwrap();
        assert_eq!(read_matrix_text(&p).unwrap(), m);
    }

    #[test]
    fn vtk_layout() {
        let g = UniformGrid::from_levels(1);
        let p = tmp("f.vtk");
        write_vtk_point_data(&p, &g, &[("u", &[0.0; 9])]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("DIMENSIONS 3 3 1"));
        assert!(text.contains("POINT_DATA 9"));
        assert_eq!(text.lines().count(), 7 + 1 + 2 + 9);
        assert!(write_vtk_cell_data(&p, &g, &[("q", &[0.0; 3])]).is_err());
    }
}
