// Compares backbone features with torchvision on randomly initialised
// weights. Usage: backbone_parity <python> <export script> <work dir>
// Exit code 77 means torch is unavailable (test skipped).

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "busdx/backbone.hpp"

using namespace busdx;

int main(int argc, char** argv) {
    if (argc != 4) {
        std::cerr << "usage: backbone_parity <python> <export script> <work dir>\n";
        return 2;
    }
    const std::string python = argv[1], script = argv[2];
    const std::filesystem::path work = argv[3];
    if (std::system((python + " -c \"import torch, torchvision\" 2>/dev/null").c_str()) != 0) {
        std::cout << "SKIP torch/torchvision not importable\n";
        return 77;
    }
    std::filesystem::create_directories(work);
    int failures = 0;
    for (BackboneKind kind :
         {BackboneKind::VGG16, BackboneKind::VGG19, BackboneKind::ResNet50, BackboneKind::DenseNet121}) {
        const std::string name(to_string(kind));
        const auto ref_path = work / (name + "_reference.busdx");
        const std::string cmd = python + " " + script + " --backbone " + name + " --out " + work.string() +
                                " --random-seed 11 --reference " + ref_path.string() + " > /dev/null";
        if (std::system(cmd.c_str()) != 0) {
            std::cout << "FAIL " << name << ": export script failed\n";
            ++failures;
            continue;
        }
        const Backbone backbone = Backbone::load(kind, work);
        const Container ref = load_container(ref_path);
        const TensorBlob& input = ref.tensor("input");
        ImageTensor img(static_cast<int>(input.shape[0]), static_cast<int>(input.shape[1]), 3);
        img.pixels = input.data;
        const auto got = backbone.extract_features(img);
        const auto& want = ref.tensor("features").data;
        if (got.size() != want.size()) {
            std::cout << "FAIL " << name << ": " << got.size() << " features, expected " << want.size() << "\n";
            ++failures;
            continue;
        }
        double scale = 0, worst = 0;
        for (std::size_t i = 0; i < want.size(); ++i) {
            scale = std::max(scale, static_cast<double>(std::abs(want[i])));
            worst = std::max(worst, static_cast<double>(std::abs(want[i] - got[i])));
        }
        const double rel = worst / std::max(scale, 1e-12);
        const bool ok = rel < 1e-4;
        failures += ok ? 0 : 1;
        std::cout << (ok ? "PASS " : "FAIL ") << name << ": " << want.size() << " features, max rel error " << rel
                  << "\n";
        std::filesystem::remove(backbone_weights_path(work, kind));
    }
    return failures == 0 ? 0 : 1;
}
