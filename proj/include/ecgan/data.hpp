#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ecgan::data {

// AAMI-style class ids used throughout; S/F/Q style symbols collapse into
// kClassOther and are dropped before the generative task.
inline constexpr int kClassN = 0;
inline constexpr int kClassV = 1;
inline constexpr int kClassOther = 2;

int aami_class(char symbol);
int csv_label_class(const std::string& token);
std::string class_name(int label);

struct Annotation {
    long sample_index = 0;
    char symbol = 'N';
};

struct EcgRecord {
    std::vector<std::vector<double>> signals;  // per lead, millivolts
    double sampling_rate = 0.0;
    std::vector<std::string> lead_names;
    std::vector<Annotation> annotations;
};

struct EcgBeat {
    std::vector<double> values;  // length n, normalized to [-1,1]
    int label = kClassN;
    std::string source_record;
};

struct DatasetSplit {
    std::vector<EcgBeat> generative;       // 75%; also the classifier's training pool
    std::vector<EcgBeat> classifier_tune;  // half of the held-out 25%
    std::vector<EcgBeat> classifier_test;  // the other half
    std::uint64_t seed = 0;
    int split_index = 1;  // 1..5
};

// ---- WFDB format 212 ----
struct WfdbSignalSpec {
    std::string file;
    int format = 212;
    double gain = 200.0;     // adu per millivolt; 0 in the header means 200
    double baseline = 0.0;   // adu at 0 mV
    std::string description;
};

struct WfdbHeader {
    std::string record_name;
    int n_signals = 0;
    double sampling_rate = 0.0;
    long n_samples = 0;  // per signal; 0 when the header omits it
    std::vector<WfdbSignalSpec> signals;
};

WfdbHeader parse_wfdb_header(const std::string& text);

// Unpacks 12-bit two's-complement sample pairs; three bytes carry two
// samples. Throws on byte counts that cannot hold the declared samples.
std::vector<int> decode_212(const std::vector<std::uint8_t>& bytes, long total_samples);
std::vector<std::uint8_t> encode_212(const std::vector<int>& samples);

EcgRecord parse_wfdb_212(const std::string& header_text,
                         const std::vector<std::uint8_t>& signal_bytes);

// Sidecar annotations: lines of `sample_index,symbol`.
std::vector<Annotation> parse_annotation_csv(const std::string& text);

// ---- beat pipelines ----
// Rows of `label,v1,...,vn`; a leading `label,...` header row is skipped.
// expected_len 0 takes the first row's width as n.
std::vector<EcgBeat> load_csv_beats(const std::string& path, int expected_len = 0);

// Derivative-energy thresholding with a 200 ms refractory window. The
// threshold is relative, so amplitude scaling leaves detections unchanged.
std::vector<int> detect_r_peaks(const std::vector<double>& signal, double sampling_rate);

// Midpoint-to-midpoint windows around each interior R peak, linearly
// resampled so the R sample lands at index n/2, then min-max normalized.
std::vector<EcgBeat> extract_beats(const EcgRecord& record, int lead,
                                   const std::vector<int>& r_peaks, int target_len);

std::vector<double> resample(const std::vector<double>& signal, double from_hz, double to_hz);

// Keeps classes {N,V} and undersamples the majority to the minority count.
std::vector<EcgBeat> filter_and_balance(const std::vector<EcgBeat>& beats, std::uint64_t seed);

struct SplitIndices {
    std::vector<std::size_t> generative, tune, test;
    std::uint64_t seed = 0;
    int split_index = 1;
};

// Five randomized hold-out splits: 75% generative, 25% halved into
// tune/test. The classifier trains on the generative portion's real beats.
std::vector<SplitIndices> make_split_indices(std::size_t count, std::uint64_t seed);
std::vector<DatasetSplit> make_splits(const std::vector<EcgBeat>& beats, std::uint64_t seed);
DatasetSplit materialize_split(const std::vector<EcgBeat>& beats, const SplitIndices& idx);

// helpers shared across pipelines
void normalize_beat(std::vector<double>& values);                       // min-max to [-1,1]
std::vector<double> linear_resample(const std::vector<double>& x, int out_len);

}  // namespace ecgan::data
