// HTTP API over the trial store. Routing lives in Service::handle so it can be
// exercised without a socket; serve() binds it to httplib.

#pragma once

#include <string>

#include "droid/store.hpp"

namespace httplib {
class Server;
}

namespace droid::io {

struct Response {
    int status = 200;
    json body;
};

class Service {
public:
    explicit Service(TrialStore& store) : store_(store) {}

    Response handle(const std::string& method, const std::string& path, const std::string& body);

private:
    TrialStore& store_;
};

// Registers the routes on an existing server (used by tests to control the
// lifecycle).
void bind_routes(httplib::Server& server, Service& service);

// Blocks until the server stops. Returns false when the port cannot be bound.
bool serve(Service& service, const std::string& host, int port);

}  // namespace droid::io
