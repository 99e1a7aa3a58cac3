#pragma once

#include <string>
#include <vector>

#include "spikefed/tensor.hpp"

namespace spikefed {

// The only payloads that ever cross the client/server boundary: the
// accumulated bottom-model output going up, and the loss gradient with
// respect to that output coming back. Raw pixels and labels have no message
// type and therefore cannot transit.
struct OutputMessage {
    int client_id = 0;
    int batch_id = 0;
    Tensor output;  // [B, F]
};

struct GradientMessage {
    int client_id = 0;
    int batch_id = 0;
    Tensor grad;  // [B, F], mirrors the matching OutputMessage
};

enum class MessageKind { output, gradient };

struct MessageRecord {
    MessageKind kind;
    int client_id;
    int batch_id;
    std::vector<int> shape;
    Tensor payload;  // copy, kept only while recording
};

// In-process simulation of the client<->server transport. Synchronous
// queues; a networked transport could replace this class without touching
// the training logic.
class MessageChannel {
public:
    void send_output(OutputMessage msg) {
        record(MessageKind::output, msg.client_id, msg.batch_id, msg.output);
        outputs_.push_back(std::move(msg));
    }

    void send_gradient(GradientMessage msg) {
        record(MessageKind::gradient, msg.client_id, msg.batch_id, msg.grad);
        gradients_.push_back(std::move(msg));
    }

    // Server side: collect exactly `clients` outputs for `batch_id`, returned
    // in ascending client order. Any stray or missing message is a protocol
    // violation.
    std::vector<OutputMessage> collect_outputs(int batch_id, int clients) {
        if (static_cast<int>(outputs_.size()) != clients)
            detail::fail("channel: expected " + std::to_string(clients) +
                         " client outputs, have " + std::to_string(outputs_.size()));
        std::vector<OutputMessage> out(static_cast<std::size_t>(clients));
        std::vector<bool> seen(static_cast<std::size_t>(clients), false);
        for (auto& m : outputs_) {
            if (m.batch_id != batch_id)
                detail::fail("channel: output for batch " + std::to_string(m.batch_id) +
                             " while collecting batch " + std::to_string(batch_id));
            if (m.client_id < 0 || m.client_id >= clients ||
                seen[static_cast<std::size_t>(m.client_id)])
                detail::fail("channel: duplicate or unknown client id " +
                             std::to_string(m.client_id));
            seen[static_cast<std::size_t>(m.client_id)] = true;
            out[static_cast<std::size_t>(m.client_id)] = std::move(m);
        }
        outputs_.clear();
        return out;
    }

    // Client side: take this client's gradient for `batch_id`.
    GradientMessage take_gradient(int client_id, int batch_id) {
        for (std::size_t i = 0; i < gradients_.size(); ++i) {
            if (gradients_[i].client_id == client_id) {
                if (gradients_[i].batch_id != batch_id)
                    detail::fail("channel: gradient for batch " +
                                 std::to_string(gradients_[i].batch_id) +
                                 " delivered to client awaiting batch " +
                                 std::to_string(batch_id));
                GradientMessage m = std::move(gradients_[i]);
                gradients_.erase(gradients_.begin() + static_cast<long>(i));
                return m;
            }
        }
        detail::fail("channel: no gradient for client " + std::to_string(client_id));
    }

    void set_recording(bool on) { recording_ = on; }
    const std::vector<MessageRecord>& records() const { return records_; }
    void clear_records() { records_.clear(); }

private:
    void record(MessageKind kind, int client_id, int batch_id, const Tensor& t) {
        if (!recording_) return;
        records_.push_back({kind, client_id, batch_id, t.shape(), t});
    }

    std::vector<OutputMessage> outputs_;
    std::vector<GradientMessage> gradients_;
    bool recording_ = false;
    std::vector<MessageRecord> records_;
};

}  // namespace spikefed
