#include "ecgan/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ecgan/errors.hpp"
#include "ecgan/rng.hpp"

namespace ecgan::data {

int aami_class(char symbol) {
    switch (symbol) {
        case 'N': case 'L': case 'R': case 'e': case 'j':
            return kClassN;
        case 'V': case 'E':
            return kClassV;
        default:
            return kClassOther;
    }
}

int csv_label_class(const std::string& token) {
    if (token == "N" || token == "n") return kClassN;
    if (token == "V" || token == "v") return kClassV;
    // numeric ECG5000-style labels: 1 = normal rhythm, 2/3 = R-on-T PVC and
    // PVC, the rest (supraventricular, unclassifiable) fall out of scope
    try {
        std::size_t used = 0;
        int value = std::stoi(token, &used);
        if (used != token.size()) return kClassOther;
        if (value == 1) return kClassN;
        if (value == 2 || value == 3) return kClassV;
        return kClassOther;
    } catch (const std::exception&) {
        return kClassOther;
    }
}

std::string class_name(int label) {
    if (label == kClassN) return "N";
    if (label == kClassV) return "V";
    return "other";
}

// ---- WFDB ----

WfdbHeader parse_wfdb_header(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    WfdbHeader hdr;
    bool have_record_line = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        if (!have_record_line) {
            std::string fs_field;
            if (!(ls >> hdr.record_name >> hdr.n_signals)) {
                throw ParseError("wfdb header: malformed record line '" + line + "'");
            }
            if (ls >> fs_field) {
                // the rate field may carry /counter qualifiers
                hdr.sampling_rate = std::atof(fs_field.c_str());
            } else {
                hdr.sampling_rate = 250.0;
            }
            long n = 0;
            if (ls >> n) hdr.n_samples = n;
            have_record_line = true;
            continue;
        }
        if (static_cast<int>(hdr.signals.size()) >= hdr.n_signals) break;
        WfdbSignalSpec spec;
        std::string format_field, gain_field;
        if (!(ls >> spec.file >> format_field)) {
            throw ParseError("wfdb header: malformed signal line '" + line + "'");
        }
        // format may carry xSAMP/:SKEW/+OFFSET suffixes
        spec.format = std::atoi(format_field.c_str());
        double adc_zero = 0.0;
        if (ls >> gain_field) {
            // gain and optional parenthesized baseline, e.g. 200(1024)/mV
            spec.gain = std::atof(gain_field.c_str());
            auto open = gain_field.find('(');
            auto close = gain_field.find(')');
            if (open != std::string::npos && close != std::string::npos && close > open) {
                spec.baseline = std::atof(gain_field.substr(open + 1, close - open - 1).c_str());
            } else {
                std::string adc_res;
                if (ls >> adc_res && ls >> adc_zero) spec.baseline = adc_zero;
            }
        }
        if (spec.gain == 0.0) spec.gain = 200.0;
        // description is the trailing free text, when present
        std::string rest, tok;
        while (ls >> tok) rest = tok;
        spec.description = rest.empty() ? ("lead" + std::to_string(hdr.signals.size())) : rest;
        hdr.signals.push_back(spec);
    }
    if (!have_record_line) throw ParseError("wfdb header: empty header");
    if (static_cast<int>(hdr.signals.size()) != hdr.n_signals) {
        throw ParseError("wfdb header: expected " + std::to_string(hdr.n_signals) +
                         " signal lines, found " + std::to_string(hdr.signals.size()));
    }
    return hdr;
}

std::vector<int> decode_212(const std::vector<std::uint8_t>& bytes, long total_samples) {
    if (total_samples < 0) throw ParseError("decode_212: negative sample count");
    const long groups_needed = (total_samples + 1) / 2;
    if (static_cast<long>(bytes.size()) < groups_needed * 3) {
        throw ParseError("decode_212: truncated stream, " + std::to_string(bytes.size()) +
                         " bytes cannot hold " + std::to_string(total_samples) + " samples");
    }
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(total_samples));
    auto sign_extend_12 = [](int v) { return v >= 0x800 ? v - 0x1000 : v; };
    for (long g = 0; g < groups_needed; ++g) {
        const std::uint8_t b0 = bytes[static_cast<std::size_t>(g) * 3];
        const std::uint8_t b1 = bytes[static_cast<std::size_t>(g) * 3 + 1];
        const std::uint8_t b2 = bytes[static_cast<std::size_t>(g) * 3 + 2];
        int s1 = b0 | ((b1 & 0x0F) << 8);
        int s2 = b2 | ((b1 >> 4) << 8);
        out.push_back(sign_extend_12(s1));
        if (static_cast<long>(out.size()) < total_samples) out.push_back(sign_extend_12(s2));
    }
    return out;
}

std::vector<std::uint8_t> encode_212(const std::vector<int>& samples) {
    std::vector<std::uint8_t> out;
    out.reserve((samples.size() + 1) / 2 * 3);
    for (std::size_t i = 0; i < samples.size(); i += 2) {
        int s1 = samples[i];
        int s2 = (i + 1 < samples.size()) ? samples[i + 1] : 0;
        if (s1 < -2048 || s1 > 2047 || s2 < -2048 || s2 > 2047)
            throw ParseError("encode_212: sample outside the 12-bit range");
        unsigned u1 = static_cast<unsigned>(s1) & 0xFFF;
        unsigned u2 = static_cast<unsigned>(s2) & 0xFFF;
        out.push_back(static_cast<std::uint8_t>(u1 & 0xFF));
        out.push_back(static_cast<std::uint8_t>(((u1 >> 8) & 0x0F) | ((u2 >> 8) << 4)));
        out.push_back(static_cast<std::uint8_t>(u2 & 0xFF));
    }
    return out;
}

EcgRecord parse_wfdb_212(const std::string& header_text,
                         const std::vector<std::uint8_t>& signal_bytes) {
    WfdbHeader hdr = parse_wfdb_header(header_text);
    if (hdr.n_signals < 1 || hdr.n_signals > 2) {
        throw ParseError("wfdb: only 1- or 2-signal records are supported, header declares " +
                         std::to_string(hdr.n_signals));
    }
    for (const auto& spec : hdr.signals) {
        if (spec.format != 212)
            throw ParseError("wfdb: unsupported signal format " + std::to_string(spec.format) +
                             " (only 212)");
    }
    long per_signal = hdr.n_samples;
    if (per_signal == 0) {
        long total = static_cast<long>(signal_bytes.size()) / 3 * 2;
        per_signal = total / hdr.n_signals;
    }
    std::vector<int> raw = decode_212(signal_bytes, per_signal * hdr.n_signals);
    EcgRecord rec;
    rec.sampling_rate = hdr.sampling_rate;
    rec.signals.assign(static_cast<std::size_t>(hdr.n_signals), {});
    for (int s = 0; s < hdr.n_signals; ++s) {
        rec.signals[static_cast<std::size_t>(s)].reserve(static_cast<std::size_t>(per_signal));
        rec.lead_names.push_back(hdr.signals[static_cast<std::size_t>(s)].description);
    }
    // frames interleave one sample of each signal
    for (long i = 0; i < per_signal * hdr.n_signals; ++i) {
        int s = static_cast<int>(i % hdr.n_signals);
        const auto& spec = hdr.signals[static_cast<std::size_t>(s)];
        rec.signals[static_cast<std::size_t>(s)].push_back(
            (raw[static_cast<std::size_t>(i)] - spec.baseline) / spec.gain);
    }
    return rec;
}

std::vector<Annotation> parse_annotation_csv(const std::string& text) {
    std::vector<Annotation> anns;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        auto comma = line.find(',');
        if (comma == std::string::npos)
            throw ParseError("annotation csv: line " + std::to_string(line_no) +
                             " is not `sample_index,symbol`");
        Annotation a;
        try {
            a.sample_index = std::stol(line.substr(0, comma));
        } catch (const std::exception&) {
            throw ParseError("annotation csv: bad sample index on line " + std::to_string(line_no));
        }
        std::string sym = line.substr(comma + 1);
        while (!sym.empty() && (sym.back() == '\r' || sym.back() == ' ')) sym.pop_back();
        if (sym.empty())
            throw ParseError("annotation csv: missing symbol on line " + std::to_string(line_no));
        a.symbol = sym[0];
        anns.push_back(a);
    }
    return anns;
}

// ---- beat pipelines ----

void normalize_beat(std::vector<double>& values) {
    if (values.empty()) return;
    double lo = values[0], hi = values[0];
    for (double v : values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    double range = hi - lo;
    if (range < 1e-12) {
        std::fill(values.begin(), values.end(), 0.0);
        return;
    }
    for (double& v : values) v = -1.0 + 2.0 * (v - lo) / range;
}

std::vector<EcgBeat> load_csv_beats(const std::string& path, int expected_len) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open beat csv '" + path + "'");
    std::vector<EcgBeat> beats;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ls(line);
        std::string field;
        while (std::getline(ls, field, ',')) fields.push_back(field);
        if (line_no == 1 && !fields.empty() && fields[0] == "label") continue;  // header row
        if (fields.size() < 2)
            throw ParseError(path + ": line " + std::to_string(line_no) + " has no samples");
        EcgBeat beat;
        beat.label = csv_label_class(fields[0]);
        beat.source_record = path;
        beat.values.reserve(fields.size() - 1);
        for (std::size_t i = 1; i < fields.size(); ++i) {
            char* end = nullptr;
            double v = std::strtod(fields[i].c_str(), &end);
            if (end == fields[i].c_str() || *end != '\0')
                throw ParseError(path + ": line " + std::to_string(line_no) +
                                 ": non-numeric field '" + fields[i] + "'");
            beat.values.push_back(v);
        }
        if (expected_len == 0) expected_len = static_cast<int>(beat.values.size());
        if (static_cast<int>(beat.values.size()) != expected_len)
            throw ParseError(path + ": line " + std::to_string(line_no) + " has " +
                             std::to_string(beat.values.size()) + " values, expected " +
                             std::to_string(expected_len));
        normalize_beat(beat.values);
        beats.push_back(std::move(beat));
    }
    return beats;
}

std::vector<int> detect_r_peaks(const std::vector<double>& signal, double sampling_rate) {
    if (sampling_rate <= 0.0) throw StateError("detect_r_peaks: sampling rate must be positive");
    if (static_cast<double>(signal.size()) < 2.0 * sampling_rate)
        throw StateError("detect_r_peaks: need at least two seconds of signal");

    const std::size_t n = signal.size();
    std::vector<double> energy(n, 0.0);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        double d = signal[i + 1] - signal[i];
        energy[i] = d * d;
    }
    // moving-average integration over ~150 ms
    const int win = std::max(1, static_cast<int>(std::lround(0.15 * sampling_rate)));
    std::vector<double> smooth(n, 0.0);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += energy[i];
        if (i >= static_cast<std::size_t>(win)) acc -= energy[i - static_cast<std::size_t>(win)];
        smooth[i] = acc / win;
    }
    double peak_energy = *std::max_element(smooth.begin(), smooth.end());
    if (peak_energy <= 0.0) return {};
    const double threshold = 0.25 * peak_energy;

    const int refractory = static_cast<int>(std::lround(0.2 * sampling_rate));
    const int refine_win = static_cast<int>(std::lround(0.1 * sampling_rate));
    std::vector<int> peaks;
    long last = -refractory - 1;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        if (smooth[i] < threshold) continue;
        if (!(smooth[i] >= smooth[i - 1] && smooth[i] >= smooth[i + 1])) continue;
        // refine to the signal maximum near the energy peak
        long lo = std::max<long>(0, static_cast<long>(i) - refine_win);
        long hi = std::min<long>(static_cast<long>(n) - 1, static_cast<long>(i) + refine_win);
        long best = lo;
        for (long j = lo; j <= hi; ++j)
            if (signal[static_cast<std::size_t>(j)] > signal[static_cast<std::size_t>(best)])
                best = j;
        if (best - last <= refractory) {
            if (!peaks.empty() &&
                signal[static_cast<std::size_t>(best)] > signal[static_cast<std::size_t>(peaks.back())]) {
                peaks.back() = static_cast<int>(best);
                last = best;
            }
            continue;
        }
        peaks.push_back(static_cast<int>(best));
        last = best;
    }
    return peaks;
}

std::vector<double> linear_resample(const std::vector<double>& x, int out_len) {
    if (x.empty()) throw StateError("linear_resample: empty input");
    if (out_len < 1) throw StateError("linear_resample: output length must be positive");
    std::vector<double> out(static_cast<std::size_t>(out_len));
    if (x.size() == 1 || out_len == 1) {
        std::fill(out.begin(), out.end(), x[0]);
        return out;
    }
    const double step = static_cast<double>(x.size() - 1) / (out_len - 1);
    for (int i = 0; i < out_len; ++i) {
        double pos = i * step;
        auto idx = static_cast<std::size_t>(pos);
        if (idx >= x.size() - 1) {
            out[static_cast<std::size_t>(i)] = x.back();
            continue;
        }
        double frac = pos - static_cast<double>(idx);
        out[static_cast<std::size_t>(i)] = x[idx] * (1.0 - frac) + x[idx + 1] * frac;
    }
    return out;
}

std::vector<EcgBeat> extract_beats(const EcgRecord& record, int lead,
                                   const std::vector<int>& r_peaks, int target_len) {
    if (lead < 0 || lead >= static_cast<int>(record.signals.size()))
        throw StateError("extract_beats: lead index out of range");
    if (r_peaks.size() < 3) throw StateError("extract_beats: need at least three R peaks");
    if (target_len < 4) throw StateError("extract_beats: target length too small");

    const std::vector<double>& signal = record.signals[static_cast<std::size_t>(lead)];
    const int n_half = target_len / 2;
    std::vector<EcgBeat> beats;
    for (std::size_t k = 1; k + 1 < r_peaks.size(); ++k) {
        const int r = r_peaks[k];
        const int lo = (r_peaks[k - 1] + r) / 2;
        const int hi = (r + r_peaks[k + 1]) / 2;
        if (lo < 0 || hi >= static_cast<int>(signal.size()) || hi - lo < 3) continue;
        // resample each half separately so the R sample lands at n/2
        std::vector<double> left(signal.begin() + lo, signal.begin() + r + 1);
        std::vector<double> right(signal.begin() + r, signal.begin() + hi + 1);
        std::vector<double> left_rs = linear_resample(left, n_half + 1);
        std::vector<double> right_rs = linear_resample(right, target_len - n_half);
        EcgBeat beat;
        beat.values.reserve(static_cast<std::size_t>(target_len));
        beat.values.insert(beat.values.end(), left_rs.begin(), left_rs.end());
        beat.values.insert(beat.values.end(), right_rs.begin() + 1, right_rs.end());
        // label from the annotation closest to the R peak inside the window
        long best_dist = -1;
        char symbol = 0;
        for (const Annotation& a : record.annotations) {
            if (a.sample_index < lo || a.sample_index > hi) continue;
            long dist = std::labs(a.sample_index - r);
            if (best_dist < 0 || dist < best_dist) {
                best_dist = dist;
                symbol = a.symbol;
            }
        }
        beat.label = symbol ? aami_class(symbol) : kClassOther;
        normalize_beat(beat.values);
        beats.push_back(std::move(beat));
    }
    return beats;
}

std::vector<double> resample(const std::vector<double>& signal, double from_hz, double to_hz) {
    if (from_hz <= 0.0 || to_hz <= 0.0) throw StateError("resample: rates must be positive");
    if (signal.empty()) return {};
    const int out_len =
        static_cast<int>(std::lround(static_cast<double>(signal.size()) * to_hz / from_hz));
    std::vector<double> out(static_cast<std::size_t>(std::max(1, out_len)));
    const double step = from_hz / to_hz;
    for (std::size_t i = 0; i < out.size(); ++i) {
        double pos = static_cast<double>(i) * step;
        auto idx = static_cast<std::size_t>(pos);
        if (idx >= signal.size() - 1) {
            out[i] = signal.back();
            continue;
        }
        double frac = pos - static_cast<double>(idx);
        out[i] = signal[idx] * (1.0 - frac) + signal[idx + 1] * frac;
    }
    return out;
}

std::vector<EcgBeat> filter_and_balance(const std::vector<EcgBeat>& beats, std::uint64_t seed) {
    std::vector<std::size_t> n_idx, v_idx;
    for (std::size_t i = 0; i < beats.size(); ++i) {
        if (beats[i].label == kClassN) n_idx.push_back(i);
        else if (beats[i].label == kClassV) v_idx.push_back(i);
    }
    if (n_idx.empty() || v_idx.empty())
        throw StateError("filter_and_balance: need both N and V classes, got " +
                         std::to_string(n_idx.size()) + " N and " + std::to_string(v_idx.size()) +
                         " V beats");
    const std::size_t keep = std::min(n_idx.size(), v_idx.size());
    auto& majority = n_idx.size() > v_idx.size() ? n_idx : v_idx;
    if (majority.size() > keep) {
        Rng rng(stream_seed(seed, "shuffle", 7));
        rng.shuffle(majority);
        majority.resize(keep);
        std::sort(majority.begin(), majority.end());
    }
    std::vector<std::size_t> all;
    all.insert(all.end(), n_idx.begin(), n_idx.end());
    all.insert(all.end(), v_idx.begin(), v_idx.end());
    std::sort(all.begin(), all.end());
    std::vector<EcgBeat> out;
    out.reserve(all.size());
    for (std::size_t i : all) out.push_back(beats[i]);
    return out;
}

std::vector<SplitIndices> make_split_indices(std::size_t count, std::uint64_t seed) {
    if (count < 8) throw StateError("make_splits: dataset too small to split");
    std::vector<SplitIndices> splits;
    for (int k = 0; k < 5; ++k) {
        std::vector<std::size_t> order(count);
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(stream_seed(seed, "shuffle", 100 + static_cast<std::uint64_t>(k)));
        rng.shuffle(order);
        const auto cls_count =
            static_cast<std::size_t>(std::lround(0.25 * static_cast<double>(count)));
        const std::size_t tune_count = cls_count / 2;
        SplitIndices split;
        split.seed = seed;
        split.split_index = k + 1;
        for (std::size_t i = 0; i < order.size(); ++i) {
            if (i < tune_count) split.tune.push_back(order[i]);
            else if (i < cls_count) split.test.push_back(order[i]);
            else split.generative.push_back(order[i]);
        }
        splits.push_back(std::move(split));
    }
    return splits;
}

DatasetSplit materialize_split(const std::vector<EcgBeat>& beats, const SplitIndices& idx) {
    DatasetSplit split;
    split.seed = idx.seed;
    split.split_index = idx.split_index;
    auto fill = [&beats](std::vector<EcgBeat>& out, const std::vector<std::size_t>& ids) {
        out.reserve(ids.size());
        for (std::size_t i : ids) {
            if (i >= beats.size()) throw StateError("split index out of range for dataset");
            out.push_back(beats[i]);
        }
    };
    fill(split.generative, idx.generative);
    fill(split.classifier_tune, idx.tune);
    fill(split.classifier_test, idx.test);
    return split;
}

std::vector<DatasetSplit> make_splits(const std::vector<EcgBeat>& beats, std::uint64_t seed) {
    std::vector<DatasetSplit> splits;
    for (const SplitIndices& idx : make_split_indices(beats.size(), seed))
        splits.push_back(materialize_split(beats, idx));
    return splits;
}

}  // namespace ecgan::data
