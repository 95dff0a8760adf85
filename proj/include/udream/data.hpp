#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "udream/deformation.hpp"
#include "udream/mri.hpp"
#include "udream/pairs.hpp"
#include "udream/training.hpp"

namespace udream::data {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when groundtruth is requested from a dataset opened for training.
class GroundtruthAccessError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// 64-bit FNV-1a.
uint64_t fnv1a64(const void* data, size_t size, uint64_t state = 0xcbf29ce484222325ULL);

// ---- phantoms ----

/// Ellipse phantom with magnitude in [0, 1] and a smooth random phase. The outer ellipse lies fully inside the frame.
mri::ComplexImage make_phantom(int64_t height, int64_t width, uint64_t seed);
/// Image i uses seed + i.
std::vector<mri::ComplexImage> generate_phantoms(int64_t n, int64_t height, int64_t width, uint64_t seed);

// ---- datasets ----

enum class Split { Train, Val, Test };
std::string to_string(Split s);
Split parse_split(const std::string& s);

struct MaskConfig {
    double rate = 0.25;
    double center_fraction = 0.08;
};

struct DatasetConfig {
    int64_t size = 64;  // H = W
    int64_t n_train = 48;
    int64_t n_val = 6;
    int64_t n_test = 6;
    deform::DeformSynthConfig deform;  // its seed is replaced per sample
    MaskConfig mask;
    double snr_db = 40.0;  // +inf disables noise
    uint64_t seed = 0;
    bool shared_mask = false;  // draw the moving mask with the reference mask's seed
    std::string source = "phantom";

    int64_t total() const { return n_train + n_val + n_test; }
    void validate() const;
};

struct SampleSeeds {
    uint64_t image = 0;
    uint64_t deform = 0;
    uint64_t mask_ref = 0;
    uint64_t mask_mov = 0;
    uint64_t noise_ref = 0;
    uint64_t noise_mov = 0;
};

struct SampleRecord {
    std::string id;
    Split split = Split::Train;
    SampleSeeds seeds;
    uint64_t train_offset = 0;  // bytes into samples.bin
    uint64_t eval_offset = 0;
};

class Dataset {
public:
    enum class Access { Training, Evaluation };

    /// images.size() must equal cfg.total(). Values are rounded to float32 so a reload is bit-exact.
    static Dataset build(const std::vector<mri::ComplexImage>& images, const DatasetConfig& cfg);
    static Dataset build_phantoms(const DatasetConfig& cfg);
    /// Verifies the checksum. With Access::Training the groundtruth section is never decoded.
    static Dataset load(const std::filesystem::path& dir, Access access);

    /// Writes manifest.json and samples.bin. Needs groundtruth, so not available on training-only datasets.
    void save(const std::filesystem::path& dir) const;

    const DatasetConfig& config() const { return cfg_; }
    const std::vector<SampleRecord>& records() const { return records_; }
    Access access() const { return access_; }
    uint64_t checksum() const { return checksum_; }

    /// Measurement pairs only.
    PairBatch pairs(Split split) const;
    /// Pairs with groundtruth; throws GroundtruthAccessError for training-only datasets.
    std::vector<EvalSample> evaluation(Split split) const;

    std::string manifest_json() const;

private:
    struct Stored {
        mri::KSpaceMeasurement y_ref, y_mov;
        mri::ComplexImage x_ref;
        deform::DeformationField phi;
    };
    std::vector<uint8_t> serialize() const;

    DatasetConfig cfg_;
    std::vector<SampleRecord> records_;
    std::vector<Stored> samples_;
    Access access_ = Access::Evaluation;
    uint64_t checksum_ = 0;
};

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kSamplesFile = "samples.bin";
inline constexpr const char* kCheckpointFile = "checkpoint.udrm";
inline constexpr const char* kMetricsFile = "metrics.csv";

// ---- checkpoints ----

std::vector<uint8_t> encode_checkpoint(const train::Checkpoint& ck);
train::Checkpoint decode_checkpoint(const std::vector<uint8_t>& bytes, const std::string& origin = "checkpoint");
void save_checkpoint(const train::Checkpoint& ck, const std::filesystem::path& path);
train::Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---- images and tables ----

/// PGM (P5, 8 or 16 bit) and raw float32 files with a "<file>.size" sidecar holding "height width".
/// Each image is normalized to max magnitude 1 with zero phase. Files are read in name order.
std::vector<mri::ComplexImage> ingest_images(const std::filesystem::path& directory);
mri::ComplexImage read_pgm(const std::filesystem::path& path);

/// Magnitudes divided by peak (default: the image maximum), clamped to [0, 1] and quantized.
void export_pgm(const std::vector<double>& magnitude, int64_t height, int64_t width, const std::filesystem::path& path,
                int bit_depth, std::optional<double> peak = std::nullopt);
void export_pgm(const mri::ComplexImage& img, const std::filesystem::path& path, int bit_depth,
                std::optional<double> peak = std::nullopt);

/// 6 significant digits, '.' decimal point, no locale.
std::string format_number(double v);

void export_csv(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows,
                const std::filesystem::path& path);
void export_csv(const std::vector<std::string>& header, const std::vector<std::vector<double>>& rows,
                const std::filesystem::path& path);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};
CsvTable read_csv(const std::filesystem::path& path);

void write_metrics(const train::MetricLog& log, const std::filesystem::path& path);
train::MetricLog read_metrics(const std::filesystem::path& path);

std::vector<uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<uint8_t>& bytes);

}  // namespace udream::data
