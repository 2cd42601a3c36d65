#pragma once

#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "selftrain/data/benchmark.hpp"
#include "selftrain/data/dataset.hpp"
#include "selftrain/errors.hpp"
#include "selftrain/numerics/checkpoint.hpp"

namespace selftrain::data {

// On-disk dataset: manifest.csv with one row per sample
//   sample_id,group_id,split,label,payload
// where payload is "<bundle file>#<row>" and each bundle is a checkpoint-format
// file holding "inputs" [N,C,H,W] (f32) and "meta.num_classes". Label is blank
// for unlabeled samples.
inline constexpr const char* kManifestHeader = "sample_id,group_id,split,label,payload";

inline void write_dataset_bundle(const std::filesystem::path& dir, const Benchmark& splits) {
    std::ostringstream csv;
    csv << kManifestHeader << "\n";
    for (const auto& [tag, ds] : splits) {
        ds.validate();
        const std::string bundle = to_string(tag) + ".slt";
        numerics::save_checkpoint(dir / bundle,
                                  {{"inputs", ds.inputs},
                                   {"meta.num_classes", numerics::Tensor<double>::scalar(static_cast<double>(ds.num_classes))}});
        for (std::size_t i = 0; i < ds.size(); ++i) {
            csv << to_string(tag) << "-" << i << "," << ds.groups[i] << "," << to_string(tag) << ",";
            if (ds.labels[i] != Dataset::kNoLabel) csv << ds.labels[i];
            csv << "," << bundle << "#" << i << "\n";
        }
    }
    numerics::write_file_atomic(dir / "manifest.csv", csv.str());
}

namespace detail {
inline std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}
}  // namespace detail

inline Benchmark read_dataset_manifest(const std::filesystem::path& manifest) {
    if (!std::filesystem::exists(manifest)) throw DataError("dataset manifest not found: " + manifest.string());
    std::istringstream in(numerics::read_file(manifest));
    std::string line;
    if (!std::getline(in, line) || line != kManifestHeader) {
        throw DataError("manifest " + manifest.string() + " has an unexpected header");
    }
    const auto base = manifest.parent_path();

    struct Bundle {
        numerics::Tensor<float> inputs;
        std::size_t num_classes = 0;
    };
    std::map<std::string, Bundle> bundles;
    struct Row {
        std::int64_t group;
        int label;
        std::string bundle;
        std::size_t index;
    };
    std::map<SplitTag, std::vector<Row>> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = detail::split_fields(line);
        const auto hash = f.size() == 5 ? f[4].rfind('#') : std::string::npos;
        if (hash == std::string::npos) {
            throw DataError("malformed manifest line " + std::to_string(line_no) + ": " + line);
        }
        try {
            Row r{std::stoll(f[1]), f[3].empty() ? Dataset::kNoLabel : std::stoi(f[3]), f[4].substr(0, hash),
                  static_cast<std::size_t>(std::stoull(f[4].substr(hash + 1)))};
            rows[parse_split(f[2])].push_back(std::move(r));
        } catch (const std::logic_error&) {
            throw DataError("malformed manifest line " + std::to_string(line_no) + ": " + line);
        }
    }

    Benchmark out;
    for (auto& [tag, list] : rows) {
        Dataset ds;
        ds.split = tag;
        std::vector<float> values;
        Shape sample_shape;
        for (const auto& r : list) {
            auto it = bundles.find(r.bundle);
            if (it == bundles.end()) {
                Bundle b;
                for (auto& nt : numerics::load_checkpoint(base / r.bundle)) {
                    if (nt.name == "inputs") b.inputs = nt.as<float>();
                    if (nt.name == "meta.num_classes") b.num_classes = static_cast<std::size_t>(nt.as<double>()[0]);
                }
                if (b.inputs.rank() != 4) throw DataError("bundle " + r.bundle + " has no [N,C,H,W] inputs");
                it = bundles.emplace(r.bundle, std::move(b)).first;
            }
            const auto& b = it->second;
            if (r.index >= b.inputs.dim(0)) throw DataError("payload row out of range in " + r.bundle);
            sample_shape = Shape(b.inputs.shape().begin() + 1, b.inputs.shape().end());
            const std::size_t stride = b.inputs.row_size();
            values.insert(values.end(), b.inputs.data() + r.index * stride, b.inputs.data() + (r.index + 1) * stride);
            ds.labels.push_back(r.label);
            ds.groups.push_back(r.group);
            ds.num_classes = b.num_classes;
        }
        Shape shape{list.size()};
        shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
        ds.inputs = numerics::Tensor<float>(shape, std::move(values));
        ds.validate();
        out.emplace(tag, std::move(ds));
    }
    return out;
}

}  // namespace selftrain::data
