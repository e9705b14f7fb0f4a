#pragma once

// Single point of inclusion for cpp-httplib so build knobs agree across
// translation units. The stock accept backlog of 5 drops SYNs as soon as a
// few dozen clients connect at once, which shows up as 1 s retransmit stalls.
#ifndef CPPHTTPLIB_LISTEN_BACKLOG
#define CPPHTTPLIB_LISTEN_BACKLOG 1024
#endif

#include <httplib.h>
