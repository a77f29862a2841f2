//! Writing label masks for arbitrary PNG images with a trained checkpoint.

use std::path::{Path, PathBuf};

use nnsam_core::metrics::LabelMask;
use nnsam_core::Grid;

use crate::checkpoint;
use crate::data::{preprocess_with, Image, Sample};
use crate::error::{io_err, Error, Result};
use crate::model::{argmax, NnSamModel};
use crate::nn::resize::{bilinear, nearest};
use crate::nn::Param;
use crate::pngio;
use crate::tensor::Tensor;

#[derive(Debug)]
pub struct Predictor {
    model: NnSamModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Grid<u8>,
    /// `C x H x W` level-set regression at the input resolution.
    pub levelset: Option<Vec<f32>>,
}

impl Predictor {
    pub fn load(checkpoint: &Path) -> Result<Self> {
        Ok(Self {
            model: checkpoint::load(checkpoint)?.model,
        })
    }

    pub fn from_model(model: NnSamModel) -> Self {
        Self { model }
    }

    /// Predicts at plan resolution and maps the result back to the image size.
    pub fn predict_image(&mut self, image: &Grid<f32>) -> Result<Prediction> {
        let plan = self.model.plan().clone();
        let (h, w) = image.shape();
        let size = plan.input_height;
        let dummy = LabelMask::new(Grid::filled(h, w, 0), plan.classes, (1.0, 1.0))?;
        let sample = Sample::new("input", Image::from_grid(image.clone()), dummy)?;
        let pre = preprocess_with(&sample, size, &plan.normalization)?;
        let x = Tensor::from_vec(1, pre.image.channels, size, size, pre.image.data);
        let out = self.model.forward(&x, false)?;
        let labels = Grid::new(h, w, nearest(&argmax(&out.logits, 0), size, size, h, w))?;
        let levelset = out.levelset.map(|l| {
            let p = l.plane();
            l.data.chunks_exact(p).flat_map(|c| bilinear(c, size, size, h, w)).collect()
        });
        Ok(Prediction { labels, levelset })
    }

    pub fn classes(&self) -> usize {
        self.model.plan().classes
    }
}

/// Output of one input file.
#[derive(Debug)]
pub struct FileOutcome {
    pub input: PathBuf,
    pub result: Result<PathBuf>,
}

/// PNG files directly inside `dir`, sorted by name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    v.sort();
    Ok(v)
}

/// Predicts every input, writing `<stem>.png` masks (and `<stem>.levelset.bin`
/// tensor archives when requested) into `out_dir`. Failures are per file.
pub fn predict_files(predictor: &mut Predictor, inputs: &[PathBuf], out_dir: &Path, levelset: bool) -> Result<Vec<FileOutcome>> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    Ok(inputs
        .iter()
        .map(|input| FileOutcome {
            input: input.clone(),
            result: predict_one(predictor, input, out_dir, levelset),
        })
        .collect())
}

fn predict_one(predictor: &mut Predictor, input: &Path, out_dir: &Path, levelset: bool) -> Result<PathBuf> {
    let image = pngio::read_gray(input)?;
    let pred = predictor.predict_image(&image)?;
    let stem = input
        .file_stem()
        .ok_or_else(|| Error::Image {
            path: input.to_path_buf(),
            message: "no file name".into(),
        })?
        .to_string_lossy()
        .into_owned();
    let out = out_dir.join(format!("{stem}.png"));
    pngio::write_labels(&out, &pred.labels)?;
    if let (true, Some(ls)) = (levelset, pred.levelset) {
        let (h, w) = image.shape();
        let p = Param::new("levelset", vec![predictor.classes(), h, w], ls);
        let path = out_dir.join(format!("{stem}.levelset.bin"));
        let file = std::fs::File::create(&path).map_err(io_err(&path))?;
        crate::archive::write_tensors(std::io::BufWriter::new(file), [&p]).map_err(io_err(&path))?;
    }
    Ok(out)
}
