//! Versioned self-describing checkpoint container ("SGLM"): magic bytes,
//! format version, model kind, vocabulary list, then named f32 arrays in
//! little-endian order. Save/load round trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::lm::{AutoregressiveLm, LanguageModel, NGramLm, NeuralLm};
use crate::net::ClassifierNet;
use crate::vocab::{TokenId, Vocabulary};

const MAGIC: &[u8; 4] = b"SGLM";
const VERSION: u32 = 1;

/// A named array with shape, the unit of checkpoint payload.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl NamedArray {
    pub fn scalar(name: &str, value: f32) -> Self {
        NamedArray { name: name.to_string(), dims: vec![1], data: vec![value] }
    }

    fn from_matrix(name: &str, m: &Array2<f32>) -> Self {
        NamedArray {
            name: name.to_string(),
            dims: vec![m.nrows() as u32, m.ncols() as u32],
            data: m.iter().copied().collect(),
        }
    }

    fn from_vector(name: &str, v: &Array1<f32>) -> Self {
        NamedArray { name: name.to_string(), dims: vec![v.len() as u32], data: v.to_vec() }
    }

    fn to_matrix(&self) -> Result<Array2<f32>> {
        if self.dims.len() != 2 {
            return Err(Error::Checkpoint(format!("array `{}` is not rank 2", self.name)));
        }
        Array2::from_shape_vec((self.dims[0] as usize, self.dims[1] as usize), self.data.clone())
            .map_err(|e| Error::Checkpoint(format!("array `{}`: {e}", self.name)))
    }

    fn to_vector(&self) -> Result<Array1<f32>> {
        if self.dims.len() != 1 {
            return Err(Error::Checkpoint(format!("array `{}` is not rank 1", self.name)));
        }
        Ok(Array1::from_vec(self.data.clone()))
    }
}

/// Decoded checkpoint contents.
pub struct Checkpoint {
    pub kind: String,
    pub vocab: Arc<Vocabulary>,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    fn array(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing array `{name}`")))
    }

    fn scalar(&self, name: &str) -> Result<f32> {
        let a = self.array(name)?;
        if a.data.len() != 1 {
            return Err(Error::Checkpoint(format!("array `{name}` is not a scalar")));
        }
        Ok(a.data[0])
    }
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Checkpoint(format!("invalid utf-8: {e}")))
}

pub fn write_checkpoint(path: &Path, kind: &str, vocab: &Vocabulary, arrays: &[NamedArray]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, VERSION)?;
    write_str(&mut w, kind)?;
    write_u32(&mut w, vocab.size() as u32)?;
    for tok in vocab.tokens() {
        write_str(&mut w, tok)?;
    }
    write_u32(&mut w, arrays.len() as u32)?;
    for a in arrays {
        write_str(&mut w, &a.name)?;
        write_u32(&mut w, a.dims.len() as u32)?;
        for &d in &a.dims {
            write_u32(&mut w, d)?;
        }
        let expected: usize = a.dims.iter().map(|&d| d as usize).product();
        if expected != a.data.len() {
            return Err(Error::Checkpoint(format!("array `{}` shape mismatch", a.name)));
        }
        for &v in &a.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let kind = read_str(&mut r)?;
    let vocab_len = read_u32(&mut r)? as usize;
    let mut tokens = Vec::with_capacity(vocab_len);
    for _ in 0..vocab_len {
        tokens.push(read_str(&mut r)?);
    }
    let vocab = Arc::new(Vocabulary::from_full_token_list(tokens)?);
    let n_arrays = read_u32(&mut r)? as usize;
    let mut arrays = Vec::with_capacity(n_arrays);
    for _ in 0..n_arrays {
        let name = read_str(&mut r)?;
        let rank = read_u32(&mut r)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(&mut r)?);
        }
        let total: usize = dims.iter().map(|&d| d as usize).product();
        let mut data = Vec::with_capacity(total);
        let mut buf = [0u8; 4];
        for _ in 0..total {
            r.read_exact(&mut buf)?;
            data.push(f32::from_le_bytes(buf));
        }
        arrays.push(NamedArray { name, dims, data });
    }
    Ok(Checkpoint { kind, vocab, arrays })
}

pub fn save_lm(path: &Path, model: &LanguageModel) -> Result<()> {
    match model {
        LanguageModel::NGram(m) => {
            let rows = m.sorted_counts();
            let clen = m.order() - 1;
            let vsize = m.vocab().size();
            let mut contexts = Vec::with_capacity(rows.len() * clen);
            let mut counts = Vec::with_capacity(rows.len() * vsize);
            for (ctx, row) in &rows {
                contexts.extend(ctx.iter().map(|&t| t as f32));
                counts.extend(row.iter().map(|&c| c as f32));
            }
            let arrays = vec![
                NamedArray::scalar("order", m.order() as f32),
                NamedArray::scalar("kappa", m.kappa()),
                NamedArray {
                    name: "contexts".into(),
                    dims: vec![rows.len() as u32, clen as u32],
                    data: contexts,
                },
                NamedArray {
                    name: "counts".into(),
                    dims: vec![rows.len() as u32, vsize as u32],
                    data: counts,
                },
            ];
            write_checkpoint(path, "ngram", m.vocab(), &arrays)
        }
        LanguageModel::Neural(m) => {
            let arrays = vec![
                NamedArray::scalar("context_window", m.context_window as f32),
                NamedArray::from_matrix("embed", &m.embed),
                NamedArray::from_matrix("w1", &m.w1),
                NamedArray::from_vector("b1", &m.b1),
                NamedArray::from_matrix("w2", &m.w2),
                NamedArray::from_vector("b2", &m.b2),
            ];
            write_checkpoint(path, "neural", m.vocab(), &arrays)
        }
    }
}

pub fn load_lm(path: &Path) -> Result<LanguageModel> {
    let ckpt = read_checkpoint(path)?;
    match ckpt.kind.as_str() {
        "ngram" => {
            let order = ckpt.scalar("order")? as usize;
            let kappa = ckpt.scalar("kappa")?;
            let mut model = NGramLm::new(ckpt.vocab.clone(), order, kappa)?;
            let contexts = ckpt.array("contexts")?;
            let counts = ckpt.array("counts")?;
            let n_rows = contexts.dims[0] as usize;
            let clen = contexts.dims[1] as usize;
            let vsize = counts.dims[1] as usize;
            for i in 0..n_rows {
                let ctx: Vec<TokenId> = contexts.data[i * clen..(i + 1) * clen]
                    .iter()
                    .map(|&v| v as TokenId)
                    .collect();
                let row: Vec<u32> =
                    counts.data[i * vsize..(i + 1) * vsize].iter().map(|&v| v as u32).collect();
                model.insert_count_row(ctx, row);
            }
            Ok(LanguageModel::NGram(model))
        }
        "neural" => {
            let mut model = NeuralLm {
                vocab: ckpt.vocab.clone(),
                context_window: ckpt.scalar("context_window")? as usize,
                embed: ckpt.array("embed")?.to_matrix()?,
                w1: ckpt.array("w1")?.to_matrix()?,
                b1: ckpt.array("b1")?.to_vector()?,
                w2: ckpt.array("w2")?.to_matrix()?,
                b2: ckpt.array("b2")?.to_vector()?,
            };
            // shape sanity before use
            if model.embed.nrows() != model.vocab.size() {
                return Err(Error::Checkpoint("embed rows != vocabulary size".into()));
            }
            model.context_window = model.context_window.max(1);
            Ok(LanguageModel::Neural(model))
        }
        other => Err(Error::Checkpoint(format!("unknown model kind `{other}`"))),
    }
}

pub fn save_classifier(path: &Path, net: &ClassifierNet) -> Result<()> {
    let arrays = vec![
        NamedArray::scalar("n_classes", net.n_classes as f32),
        NamedArray::from_matrix("embed", &net.embed),
        NamedArray::from_matrix("w1", &net.w1),
        NamedArray::from_vector("b1", &net.b1),
        NamedArray::from_matrix("w2", &net.w2),
        NamedArray::from_vector("b2", &net.b2),
    ];
    write_checkpoint(path, "classifier", net.vocab(), &arrays)
}

pub fn load_classifier(path: &Path) -> Result<ClassifierNet> {
    let ckpt = read_checkpoint(path)?;
    if ckpt.kind != "classifier" {
        return Err(Error::Checkpoint(format!("expected classifier, found `{}`", ckpt.kind)));
    }
    Ok(ClassifierNet {
        vocab: ckpt.vocab.clone(),
        n_classes: ckpt.scalar("n_classes")? as usize,
        embed: ckpt.array("embed")?.to_matrix()?,
        w1: ckpt.array("w1")?.to_matrix()?,
        b1: ckpt.array("b1")?.to_vector()?,
        w2: ckpt.array("w2")?.to_matrix()?,
        b2: ckpt.array("b2")?.to_vector()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{train_ngram, train_neural_lm, AutoregressiveLm, NeuralLmConfig};
    use crate::net::ClassifierConfig;
    use crate::rng::stream_rng;

    fn vocab() -> Arc<Vocabulary> {
        Arc::new(Vocabulary::new(&["a", "b", "c"]).unwrap())
    }

    #[test]
    fn ngram_round_trip_is_exact() {
        let v = vocab();
        let corpus = vec![v.encode("a b c a b").unwrap(), v.encode("c c a").unwrap()];
        let model = train_ngram(&v, &corpus, 2, 1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm.sglm");
        save_lm(&path, &LanguageModel::NGram(model.clone())).unwrap();
        let loaded = load_lm(&path).unwrap();
        for t in 0..v.size() as TokenId {
            assert_eq!(model.next_token_logits(&[t]), loaded.next_token_logits(&[t]));
        }
        // byte-identical on re-save
        let path2 = dir.path().join("lm2.sglm");
        save_lm(&path2, &loaded).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn neural_round_trip_is_bit_exact() {
        let v = vocab();
        let corpus = vec![v.encode("a b c").unwrap()];
        let mut rng = stream_rng(1, "lm", 0);
        let (model, _) =
            train_neural_lm(&v, &corpus, &NeuralLmConfig { epochs: 3, ..Default::default() }, &mut rng)
                .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm.sglm");
        save_lm(&path, &LanguageModel::Neural(model.clone())).unwrap();
        let loaded = match load_lm(&path).unwrap() {
            LanguageModel::Neural(m) => m,
            _ => panic!("wrong kind"),
        };
        assert_eq!(model.embed, loaded.embed);
        assert_eq!(model.w1, loaded.w1);
        assert_eq!(model.b1, loaded.b1);
        assert_eq!(model.w2, loaded.w2);
        assert_eq!(model.b2, loaded.b2);
    }

    #[test]
    fn classifier_round_trip() {
        let v = vocab();
        let mut rng = stream_rng(2, "clf", 0);
        let net = ClassifierNet::init(v, &ClassifierConfig::default(), &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clf.sglm");
        save_classifier(&path, &net).unwrap();
        let loaded = load_classifier(&path).unwrap();
        assert_eq!(net.embed, loaded.embed);
        assert_eq!(net.n_classes, loaded.n_classes);
    }

    #[test]
    fn missing_file_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_checkpoint(&dir.path().join("nope.sglm")),
            Err(Error::MissingArtifact(_))
        ));
        let bad = dir.path().join("bad.sglm");
        std::fs::write(&bad, b"NOPE____").unwrap();
        assert!(matches!(read_checkpoint(&bad), Err(Error::Checkpoint(_))));
    }
}
