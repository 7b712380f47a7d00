#include <fstream>
#include <iterator>

#include "adapterlab/bench.hpp"
#include "adapterlab/errors.hpp"

namespace adapterlab {

namespace {

using Kind = FormatError::Kind;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(Kind::Io, "cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::string& b, std::size_t at) {
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(b[at + i]);
    return v;
}

void require_bytes(const std::string& path, const std::string& b, std::size_t need, const char* what) {
    if (b.size() < need)
        throw FormatError(Kind::Truncated, "'" + path + "': truncated " + what + ": need " + std::to_string(need) +
                                               " bytes, file has " + std::to_string(b.size()));
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path, std::optional<std::size_t> classes,
                 const std::string& name) {
    const std::string img = read_file(images_path);
    const std::string lab = read_file(labels_path);

    require_bytes(images_path, img, 4, "header");
    if (be32(img, 0) != 0x00000803)
        throw FormatError(Kind::BadMagic, "'" + images_path + "': bad magic for a u8 rank-3 image file");
    require_bytes(images_path, img, 16, "header");
    const std::size_t n = be32(img, 4), rows = be32(img, 8), cols = be32(img, 12);
    const std::size_t dim = rows * cols;
    require_bytes(images_path, img, 16 + n * dim, "pixel payload");

    require_bytes(labels_path, lab, 4, "header");
    if (be32(lab, 0) != 0x00000801)
        throw FormatError(Kind::BadMagic, "'" + labels_path + "': bad magic for a u8 rank-1 label file");
    require_bytes(labels_path, lab, 8, "header");
    const std::size_t n_labels = be32(lab, 4);
    if (n_labels != n)
        throw FormatError(Kind::CountMismatch, "image count " + std::to_string(n) + " != label count " +
                                                   std::to_string(n_labels));
    require_bytes(labels_path, lab, 8 + n, "label payload");

    Dataset ds;
    ds.name = name;
    ds.inputs = Mat(n, dim);
    ds.labels.resize(n);
    ds.splits.assign(n, Split::Train);
    std::size_t max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t y = static_cast<unsigned char>(lab[8 + i]);
        if (classes && y >= *classes)
            throw FormatError(Kind::LabelOutOfRange, "'" + labels_path + "': label " + std::to_string(y) +
                                                         " at item " + std::to_string(i) + " is >= classes=" +
                                                         std::to_string(*classes));
        max_label = std::max(max_label, y);
        ds.labels[i] = static_cast<int>(y);
    }
    for (std::size_t i = 0; i < n * dim; ++i)
        ds.inputs.data[i] = static_cast<unsigned char>(img[16 + i]) / 255.0;
    ds.classes = classes ? *classes : (n ? max_label + 1 : 0);
    return ds;
}

}  // namespace adapterlab
